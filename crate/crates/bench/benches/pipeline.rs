use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use engage_core::dataset::{build_examples, split};
use engage_core::eval::metrics;
use engage_core::filter::{keyword_filter, segment};
use engage_core::{BaselineModel, ConfusionMatrix, DatasetConfig, KeywordList, Label, LabeledExample, SentenceRef};

const LINES: [&str; 4] = [
    "Buenos días. Sentaos, por favor. ¿Habéis hecho los deberes?",
    "Si estudiáis esta semana, aprobaréis el examen sin problema.",
    "Abrid el libro por la página cuarenta y dos... ¡Silencio!",
    "Si no entregáis el trabajo, perderéis puntos en la nota final.",
];

fn transcript(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{} ({i})", LINES[i % LINES.len()])).collect()
}

fn examples(prefix: &str, n: usize, label: Label) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            LabeledExample::new(
                format!("{} {prefix}{i}", LINES[i % 4]),
                label,
                Some(SentenceRef::new(prefix, i, 0)),
            )
        })
        .collect()
}

fn text(c: &mut Criterion) {
    let lines = transcript(2_000);
    c.bench_function("segment 2k lines", |b| {
        b.iter(|| {
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| segment(black_box(l), "l", i).len())
                .sum::<usize>()
        })
    });
    let sentences: Vec<_> = lines.iter().enumerate().flat_map(|(i, l)| segment(l, "l", i)).collect();
    let keywords = KeywordList::default_list();
    c.bench_function("keyword filter", |b| {
        b.iter(|| keyword_filter(black_box(&sentences), &keywords).len())
    });
}

fn dataset(c: &mut Criterion) {
    let pos = examples("p", 856, Label::Positive);
    let pool = examples("n", 20_000, Label::Negative);
    c.bench_function("build 856 + 16264", |b| {
        b.iter(|| build_examples(black_box(&pos), &pool, &DatasetConfig::new(1)).unwrap())
    });
    let ds = build_examples(&pos, &pool, &DatasetConfig::new(1)).unwrap();
    c.bench_function("stratified split", |b| b.iter(|| split(black_box(&ds)).unwrap()));
}

fn model(c: &mut Criterion) {
    let mut train = examples("p", 500, Label::Positive);
    train.extend(examples("n", 500, Label::Negative));
    c.bench_function("baseline train 1k", |b| {
        b.iter_batched(
            || train.clone(),
            |t| BaselineModel::train(&t).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let m = BaselineModel::train(&train).unwrap();
    c.bench_function("baseline classify", |b| b.iter(|| m.classify(black_box(LINES[1]))));
    c.bench_function("metrics", |b| {
        b.iter(|| metrics(black_box(&ConfusionMatrix::new(67, 37, 1539, 13))))
    });
}

criterion_group!(benches, text, dataset, model);
criterion_main!(benches);
