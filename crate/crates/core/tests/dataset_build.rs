use std::collections::HashSet;

use engage_core::corpus::SentenceRef;
use engage_core::dataset::{
    self, build_examples, build_labeled, split, split_sizes, write_csv, write_jsonl, DatasetError, SplitFractions,
};
use engage_core::{DatasetConfig, Label, LabeledExample, SplitPart, Task};
use proptest::prelude::*;

fn examples(prefix: &str, n: usize, label: Label) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            LabeledExample::new(
                format!("{prefix} frase {i}"),
                label,
                Some(SentenceRef::new(format!("{prefix}-lesson"), i, 0)),
            )
        })
        .collect()
}

#[test]
fn sizing_matches_reported_counts() {
    let pos = examples("p", 856, Label::Positive);
    let pool = examples("n", 20_000, Label::Negative);
    let ds = build_examples(&pos, &pool, &DatasetConfig::new(7)).unwrap();
    assert_eq!(ds.count(Label::Positive), 856);
    assert_eq!(ds.count(Label::Negative), 856 * 19);
    assert_eq!(ds.count(Label::Negative), 16_264);
}

#[test]
fn equal_classes_at_one_half() {
    let mut cfg = DatasetConfig::new(1);
    cfg.positive_fraction = 0.5;
    let ds = build_examples(
        &examples("p", 10, Label::Positive),
        &examples("n", 40, Label::Negative),
        &cfg,
    )
    .unwrap();
    assert_eq!(ds.count(Label::Negative), 10);
}

#[test]
fn pool_too_small_reports_both_numbers() {
    let err = build_examples(
        &examples("p", 10, Label::Positive),
        &examples("n", 20, Label::Negative),
        &DatasetConfig::new(1),
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            DatasetError::PoolTooSmall {
                required: 190,
                available: 20
            }
        ),
        "{err}"
    );
}

fn selected_negatives(seed: u64) -> Vec<String> {
    let ds = build_examples(
        &examples("p", 20, Label::Positive),
        &examples("n", 1000, Label::Negative),
        &DatasetConfig::new(seed),
    )
    .unwrap();
    let mut out: Vec<String> = ds
        .examples
        .into_iter()
        .filter(|e| e.label == Label::Negative)
        .map(|e| e.text)
        .collect();
    out.sort();
    out
}

#[test]
fn negative_selection_is_seeded() {
    let a = selected_negatives(11);
    assert_eq!(a, selected_negatives(11));
    let b = selected_negatives(12);
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
}

#[test]
fn contamination_on_every_seed() {
    let pos = examples("p", 30, Label::Positive);
    let mut pool = examples("n", 1000, Label::Negative);
    let mut leaked = pos[17].clone();
    leaked.label = Label::Negative;
    pool.insert(500, leaked);
    for seed in 0..200u64 {
        let err = build_examples(&pos, &pool, &DatasetConfig::new(seed)).unwrap_err();
        match err {
            DatasetError::Contamination(keys) => assert_eq!(keys.len(), 1),
            other => panic!("seed {seed}: {other}"),
        }
    }
}

#[test]
fn hundred_balanced_examples_split_evenly() {
    let mut all = examples("p", 50, Label::Positive);
    all.extend(examples("n", 50, Label::Negative));
    let ds = build_labeled(&all, &DatasetConfig::new(3)).unwrap();
    let s = split(&ds).unwrap();
    assert_eq!(
        (
            s.count(SplitPart::Train),
            s.count(SplitPart::Val),
            s.count(SplitPart::Test)
        ),
        (80, 10, 10)
    );
    for part in SplitPart::ALL {
        let pos = s
            .subset(&ds, part)
            .iter()
            .filter(|e| e.label == Label::Positive)
            .count();
        let want = if part == SplitPart::Train { 40 } else { 5 };
        assert_eq!(pos, want, "{part:?}");
    }
}

#[test]
fn frame_split_counts_under_floor_rule() {
    let mut all = examples("g", 479, Label::Positive);
    all.extend(examples("l", 377, Label::Negative));
    let ds = build_labeled(&all, &DatasetConfig::new(5)).unwrap();
    let s = split(&ds).unwrap();
    // per class: 479 -> 47/47/385, 377 -> 37/37/303
    assert_eq!(s.count(SplitPart::Val), 84);
    assert_eq!(s.count(SplitPart::Test), 84);
    assert_eq!(s.count(SplitPart::Train), 688);
    let test_pos = s
        .subset(&ds, SplitPart::Test)
        .iter()
        .filter(|e| e.label == Label::Positive)
        .count();
    assert_eq!(test_pos, 47);

    let mut flat = ds.clone();
    flat.config.stratified = false;
    let s = split(&flat).unwrap();
    assert_eq!(
        (
            s.count(SplitPart::Train),
            s.count(SplitPart::Val),
            s.count(SplitPart::Test)
        ),
        (686, 85, 85)
    );
}

#[test]
fn tiny_class_is_infeasible() {
    let mut all = examples("p", 2, Label::Positive);
    all.extend(examples("n", 50, Label::Negative));
    let ds = build_labeled(&all, &DatasetConfig::new(3)).unwrap();
    assert!(matches!(
        split(&ds),
        Err(DatasetError::SplitInfeasible { count: 2, .. })
    ));
}

/// Minimal RFC 4180 reader, independent of the `csv` crate.
fn parse_rfc4180(input: &str) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut row = Vec::new();
    let mut field = String::new();
    let mut chars = input.chars().peekable();
    let mut quoted = false;
    let mut at_field_start = true;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    chars.next();
                    field.push('"');
                } else {
                    quoted = false;
                }
            } else {
                field.push(c);
            }
            continue;
        }
        match c {
            '"' if at_field_start => {
                quoted = true;
                at_field_start = false;
            }
            ',' => {
                row.push(std::mem::take(&mut field));
                at_field_start = true;
            }
            '\r' => {}
            '\n' => {
                row.push(std::mem::take(&mut field));
                rows.push(std::mem::take(&mut row));
                at_field_start = true;
            }
            _ => {
                field.push(c);
                at_field_start = false;
            }
        }
    }
    if !field.is_empty() || !row.is_empty() {
        row.push(field);
        rows.push(row);
    }
    rows
}

fn csv_string(examples: &[LabeledExample]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, examples).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn csv_single_and_empty() {
    assert_eq!(
        csv_string(&[LabeledExample::new("hola", Label::Positive, None)]),
        "text,label\nhola,1\n"
    );
    assert_eq!(csv_string(&[]), "text,label\n");
}

#[test]
fn csv_special_characters_round_trip_through_independent_reader() {
    let texts = [
        "Sin comas",
        "Con, coma",
        "Dice \"estudia\" ya",
        "Línea\npartida",
        "\"empieza con comillas\"",
        "  espacios  ",
        "mezcla, \"todo\"\r\n junto",
    ];
    let rows: Vec<LabeledExample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| LabeledExample::new(*t, Label::from_u8((i % 2) as u8).unwrap(), None))
        .collect();
    let parsed = parse_rfc4180(&csv_string(&rows));
    assert_eq!(parsed[0], ["text", "label"]);
    assert_eq!(parsed.len(), rows.len() + 1);
    for (e, row) in rows.iter().zip(&parsed[1..]) {
        assert_eq!(row[0], e.text);
        assert_eq!(row[1], e.label.to_string());
    }
    // the crate's own reader keeps the text exactly
    let back = dataset::read_csv(csv_string(&rows).as_bytes()).unwrap();
    assert_eq!(back.len(), rows.len());
    for (e, (t, l)) in rows.iter().zip(back) {
        assert_eq!((&e.text, e.label), (&t, l));
    }
}

fn jsonl_string(examples: &[LabeledExample]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, examples, Task::Identification).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn jsonl_templates() {
    assert_eq!(
        jsonl_string(&[LabeledExample::new("hola", Label::Positive, None)]),
        "{\"prompt\":\"hola\\n\\n###\\n\\n\",\"completion\":\" 1\"}\n"
    );
    assert_eq!(
        jsonl_string(&[LabeledExample::new("a\"b", Label::Negative, None)]),
        "{\"prompt\":\"a\\\"b\\n\\n###\\n\\n\",\"completion\":\" 0\"}\n"
    );
}

#[test]
fn jsonl_89_rows_parse_independently() {
    let mut all = examples("p", 45, Label::Positive);
    all.extend(examples("n", 44, Label::Negative));
    all[3].text = "comillas \" y barra \\ y salto\n".into();
    let out = jsonl_string(&all);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 89);
    for (e, line) in all.iter().zip(lines) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 2);
        assert_eq!(obj["prompt"].as_str().unwrap(), format!("{}\n\n###\n\n", e.text));
        assert_eq!(obj["completion"].as_str().unwrap(), format!(" {}", e.label.as_u8()));
    }
    assert_eq!(dataset::validate_jsonl(&out).unwrap(), 89);
}

#[test]
fn exports_are_byte_identical_across_reruns() {
    let run = |dir: &std::path::Path| {
        let ds = build_examples(
            &examples("p", 40, Label::Positive),
            &examples("n", 2000, Label::Negative),
            &DatasetConfig::new(99),
        )
        .unwrap();
        let s = split(&ds).unwrap();
        for part in SplitPart::ALL {
            let subset = s.subset(&ds, part);
            dataset::export_csv(&dir.join(format!("{}.csv", part.as_str())), subset.iter().copied()).unwrap();
            dataset::export_jsonl(
                &dir.join(format!("{}.jsonl", part.as_str())),
                subset,
                Task::Identification,
            )
            .unwrap();
        }
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    for part in SplitPart::ALL {
        for ext in ["csv", "jsonl"] {
            let name = format!("{}.{ext}", part.as_str());
            assert_eq!(
                std::fs::read(a.path().join(&name)).unwrap(),
                std::fs::read(b.path().join(&name)).unwrap()
            );
        }
    }
}

fn labeled_dataset(
    pos: usize,
    neg: usize,
    seed: u64,
    stratified: bool,
    fractions: SplitFractions,
) -> engage_core::ExampleDataset {
    let mut all = examples("p", pos, Label::Positive);
    all.extend(examples("n", neg, Label::Negative));
    let mut cfg = DatasetConfig::new(seed);
    cfg.stratified = stratified;
    cfg.split = fractions;
    build_labeled(&all, &cfg).unwrap()
}

fn fractions() -> impl Strategy<Value = SplitFractions> {
    prop_oneof![
        Just(SplitFractions::default()),
        Just(SplitFractions {
            train: 0.7,
            val: 0.15,
            test: 0.15
        }),
        Just(SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2
        }),
        Just(SplitFractions {
            train: 0.5,
            val: 0.25,
            test: 0.25
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn split_is_a_seeded_stratified_partition(
        pos in 3usize..120,
        neg in 3usize..400,
        seed: u64,
        stratified: bool,
        fr in fractions(),
    ) {
        let ds = labeled_dataset(pos, neg, seed, stratified, fr);
        let s = split(&ds).unwrap();

        // exhaustive and disjoint: each index gets exactly one part
        prop_assert_eq!(s.parts.len(), ds.examples.len());
        let mut seen = HashSet::new();
        for part in SplitPart::ALL {
            for e in s.subset(&ds, part) {
                prop_assert!(seen.insert(e.text.clone()));
            }
        }
        prop_assert_eq!(seen.len(), pos + neg);

        // floor/floor/remainder, recomputed here with integer arithmetic
        // (every fraction above is an exact multiple of 0.05)
        let sizes = |n: usize| {
            let val = n * ((fr.val * 20.0).round() as usize) / 20;
            let test = n * ((fr.test * 20.0).round() as usize) / 20;
            (n - val - test, val, test)
        };
        let count = |part, label| s.subset(&ds, part).iter().filter(|e| e.label == label).count();
        if stratified {
            for (label, n) in [(Label::Positive, pos), (Label::Negative, neg)] {
                let (tr, va, te) = sizes(n);
                prop_assert_eq!(count(SplitPart::Train, label), tr);
                prop_assert_eq!(count(SplitPart::Val, label), va);
                prop_assert_eq!(count(SplitPart::Test, label), te);
            }
        } else {
            let (tr, va, te) = sizes(pos + neg);
            prop_assert_eq!((s.count(SplitPart::Train), s.count(SplitPart::Val), s.count(SplitPart::Test)), (tr, va, te));
        }
        prop_assert_eq!(split_sizes(pos, fr), sizes(pos));

        // same config and seed, fresh build
        let again = labeled_dataset(pos, neg, seed, stratified, fr);
        prop_assert_eq!(&again.examples, &ds.examples);
        prop_assert_eq!(split(&again).unwrap(), s);
    }

    #[test]
    fn realized_fraction_is_close(pos in 1usize..60, num in 1u32..20, seed: u64) {
        let f = num as f64 / 20.0;
        let mut cfg = DatasetConfig::new(seed);
        cfg.positive_fraction = f;
        let pool = examples("n", 1200, Label::Negative);
        let ds = build_examples(&examples("p", pos, Label::Positive), &pool, &cfg).unwrap();
        prop_assert!((ds.positive_fraction() - f).abs() <= 1.0 / ds.examples.len() as f64);
        let refs: HashSet<_> = ds.examples.iter().filter(|e| e.label == Label::Positive).map(|e| e.reference.clone()).collect();
        prop_assert!(ds.examples.iter().filter(|e| e.label == Label::Negative).all(|e| !refs.contains(&e.reference)));
    }
}
