//! Example-dataset assembly, seeded splitting and training-file export.
//!
//! All randomness comes from one seed. Negative sampling, the canonical
//! row order and the split shuffle each draw from their own ChaCha stream
//! so that changing one step never perturbs another.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;
use crate::label::{Label, Task};

/// Separator appended to every prompt in the JSONL training format.
pub const PROMPT_SEPARATOR: &str = "\n\n###\n\n";

const STREAM_SAMPLE: u64 = 0;
const STREAM_ORDER: u64 = 1;
const STREAM_SPLIT: u64 = 2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("negative pool too small: {required} negatives required, {available} available")]
    PoolTooSmall { required: usize, available: usize },
    #[error("contamination: {} positive example(s) also present in the negative pool: {}", .0.len(), .0.join(", "))]
    Contamination(Vec<String>),
    #[error("{role} example {index} has label {found}, expected {expected}")]
    WrongLabel {
        role: &'static str,
        index: usize,
        found: Label,
        expected: Label,
    },
    #[error("empty text in example {0}")]
    EmptyText(usize),
    #[error("duplicate example `{0}`")]
    Duplicate(String),
    #[error("cannot split: class {label} has {count} member(s), at least 3 required")]
    SplitInfeasible { label: String, count: usize },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("JSONL line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<SentenceRef>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: Label, reference: Option<SentenceRef>) -> Self {
        Self {
            text: text.into(),
            label,
            reference,
        }
    }

    fn key(&self) -> String {
        match &self.reference {
            Some(r) => format!("{r} {:?}", self.text),
            None => format!("{:?}", self.text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl From<[f64; 3]> for SplitFractions {
    fn from([train, val, test]: [f64; 3]) -> Self {
        Self { train, val, test }
    }
}

impl From<SplitFractions> for [f64; 3] {
    fn from(s: SplitFractions) -> Self {
        [s.train, s.val, s.test]
    }
}

fn default_positive_fraction() -> f64 {
    0.05
}

fn default_stratified() -> bool {
    true
}

/// The `[dataset]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Share of positives in the assembled dataset; 0.05 is a 5/95 ratio.
    #[serde(default = "default_positive_fraction")]
    pub positive_fraction: f64,
    #[serde(default)]
    pub split: SplitFractions,
    pub seed: u64,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
}

impl DatasetConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            positive_fraction: default_positive_fraction(),
            split: SplitFractions::default(),
            seed,
            stratified: true,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let f = self.positive_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(DatasetError::Config(format!(
                "positive_fraction must be in (0, 1], got {f}"
            )));
        }
        let s = self.split;
        for (name, v) in [("train", s.train), ("val", s.val), ("test", s.test)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DatasetError::Config(format!("split.{name} must be in (0, 1), got {v}")));
            }
        }
        let sum = s.train + s.val + s.test;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DatasetError::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Negatives needed for `positives` at the configured fraction:
    /// `round(P * (1 - f) / f)`.
    pub fn required_negatives(&self, positives: usize) -> usize {
        let f = self.positive_fraction;
        (positives as f64 * (1.0 - f) / f).round() as usize
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub positives: usize,
    pub negatives: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleDataset {
    /// Canonical (seeded-shuffle) order.
    pub examples: Vec<LabeledExample>,
    pub config: DatasetConfig,
    pub provenance: Provenance,
}

impl ExampleDataset {
    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.count(Label::Positive) as f64 / self.examples.len() as f64
    }
}

fn check_examples(
    examples: &[LabeledExample],
    role: &'static str,
    expected: Option<Label>,
) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for (index, e) in examples.iter().enumerate() {
        if e.text.trim().is_empty() {
            return Err(DatasetError::EmptyText(index));
        }
        if let Some(expected) = expected {
            if e.label != expected {
                return Err(DatasetError::WrongLabel {
                    role,
                    index,
                    found: e.label,
                    expected,
                });
            }
        }
        if !seen.insert((&e.text, &e.reference)) {
            return Err(DatasetError::Duplicate(e.key()));
        }
    }
    Ok(())
}

/// Assembles an identification dataset: every positive plus
/// `round(P * (1 - f) / f)` negatives drawn uniformly without replacement
/// from `negative_pool`.
///
/// A pool item counts as contamination when it shares a sentence ref or
/// its exact `(text, ref)` pair with any positive.
pub fn build_examples(
    positives: &[LabeledExample],
    negative_pool: &[LabeledExample],
    config: &DatasetConfig,
) -> Result<ExampleDataset, DatasetError> {
    config.validate()?;

    let positive_keys: HashSet<(&String, &Option<SentenceRef>)> =
        positives.iter().map(|e| (&e.text, &e.reference)).collect();
    let positive_refs: HashSet<&SentenceRef> = positives.iter().filter_map(|e| e.reference.as_ref()).collect();
    let contaminated: Vec<String> = negative_pool
        .iter()
        .filter(|e| {
            positive_keys.contains(&(&e.text, &e.reference))
                || e.reference.as_ref().is_some_and(|r| positive_refs.contains(r))
        })
        .map(LabeledExample::key)
        .collect();
    if !contaminated.is_empty() {
        return Err(DatasetError::Contamination(contaminated));
    }

    check_examples(positives, "positive", Some(Label::Positive))?;
    check_examples(negative_pool, "negative pool", Some(Label::Negative))?;

    let required = config.required_negatives(positives.len());
    if required > negative_pool.len() {
        return Err(DatasetError::PoolTooSmall {
            required,
            available: negative_pool.len(),
        });
    }

    let mut rng = config.rng(STREAM_SAMPLE);
    let picked = rand::seq::index::sample(&mut rng, negative_pool.len(), required);
    let mut examples: Vec<LabeledExample> = positives.to_vec();
    examples.extend(picked.iter().map(|i| negative_pool[i].clone()));
    examples.shuffle(&mut config.rng(STREAM_ORDER));

    Ok(ExampleDataset {
        examples,
        config: config.clone(),
        provenance: Provenance {
            sources: Vec::new(),
            positives: positives.len(),
            negatives: required,
            pool_size: negative_pool.len(),
        },
    })
}

/// Assembles a dataset from already-labeled examples of both classes
/// (the frame task), without class-ratio sampling.
pub fn build_labeled(examples: &[LabeledExample], config: &DatasetConfig) -> Result<ExampleDataset, DatasetError> {
    config.validate()?;
    check_examples(examples, "labeled", None)?;
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut config.rng(STREAM_ORDER));
    let positives = shuffled.iter().filter(|e| e.label == Label::Positive).count();
    Ok(ExampleDataset {
        provenance: Provenance {
            sources: Vec::new(),
            positives,
            negatives: shuffled.len() - positives,
            pool_size: 0,
        },
        examples: shuffled,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Val, SplitPart::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

/// Part assignment for each example, index-aligned with the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub parts: Vec<SplitPart>,
}

impl SplitAssignment {
    pub fn subset<'a>(&self, dataset: &'a ExampleDataset, part: SplitPart) -> Vec<&'a LabeledExample> {
        dataset
            .examples
            .iter()
            .zip(&self.parts)
            .filter(|(_, p)| **p == part)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn count(&self, part: SplitPart) -> usize {
        self.parts.iter().filter(|p| **p == part).count()
    }
}

/// Per-group sizes under the floor/floor/remainder rule: `(train, val, test)`.
pub fn split_sizes(n: usize, fractions: SplitFractions) -> (usize, usize, usize) {
    // the epsilon keeps e.g. 0.1 * 30 from landing just under 3
    let val = (fractions.val * n as f64 + 1e-9).floor() as usize;
    let test = (fractions.test * n as f64 + 1e-9).floor() as usize;
    (n - val - test, val, test)
}

/// Assigns every example to train/val/test. Within each group (each label
/// class when stratified, else the whole dataset) the members are shuffled
/// with the seed, then the first `floor(val * n)` go to val, the next
/// `floor(test * n)` to test and the rest to train.
pub fn split(dataset: &ExampleDataset) -> Result<SplitAssignment, DatasetError> {
    let config = &dataset.config;
    config.validate()?;

    let groups: Vec<(String, Vec<usize>)> = if config.stratified {
        [Label::Negative, Label::Positive]
            .into_iter()
            .map(|label| {
                let idx = (0..dataset.examples.len())
                    .filter(|&i| dataset.examples[i].label == label)
                    .collect();
                (label.to_string(), idx)
            })
            .collect()
    } else {
        vec![("all".to_owned(), (0..dataset.examples.len()).collect())]
    };

    let mut rng = config.rng(STREAM_SPLIT);
    let mut parts = vec![SplitPart::Train; dataset.examples.len()];
    for (label, mut members) in groups {
        if members.len() < 3 {
            return Err(DatasetError::SplitInfeasible {
                label,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let (_, n_val, n_test) = split_sizes(members.len(), config.split);
        for (k, &i) in members.iter().enumerate() {
            parts[i] = if k < n_val {
                SplitPart::Val
            } else if k < n_val + n_test {
                SplitPart::Test
            } else {
                SplitPart::Train
            };
        }
    }
    Ok(SplitAssignment { parts })
}

fn create(path: &Path) -> Result<BufWriter<File>, DatasetError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Two-column CSV (`text,label`) with RFC 4180 quoting.
pub fn write_csv<'a, W: Write>(
    out: W,
    examples: impl IntoIterator<Item = &'a LabeledExample>,
) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["text", "label"])?;
    for e in examples {
        writer.write_record([e.text.as_str(), &e.label.to_string()])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn export_csv<'a>(path: &Path, examples: impl IntoIterator<Item = &'a LabeledExample>) -> Result<(), DatasetError> {
    write_csv(create(path)?, examples)
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<(String, Label)>, DatasetError> {
    #[derive(Deserialize)]
    struct Row {
        text: String,
        label: Label,
    }
    csv::Reader::from_reader(input)
        .deserialize::<Row>()
        .map(|r| r.map(|r| (r.text, r.label)).map_err(DatasetError::from))
        .collect()
}

/// One line of the prompt/completion training format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCompletion {
    pub prompt: String,
    pub completion: String,
}

impl PromptCompletion {
    pub fn from_example(example: &LabeledExample) -> Self {
        Self {
            prompt: prompt_for(&example.text),
            completion: format!(" {}", example.label),
        }
    }
}

pub fn prompt_for(text: &str) -> String {
    format!("{text}{PROMPT_SEPARATOR}")
}

/// Writes one `{"prompt": ..., "completion": ...}` object per line. Both
/// tasks share the format; only the meaning of the label differs.
pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    examples: impl IntoIterator<Item = &'a LabeledExample>,
    _task: Task,
) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: PathBuf::from("<jsonl>"),
        source,
    };
    for e in examples {
        serde_json::to_writer(&mut out, &PromptCompletion::from_example(e))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn export_jsonl<'a>(
    path: &Path,
    examples: impl IntoIterator<Item = &'a LabeledExample>,
    task: Task,
) -> Result<(), DatasetError> {
    write_jsonl(create(path)?, examples, task).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Checks that `content` follows the training format line by line and
/// returns the number of records. Errors name the 1-based line.
pub fn validate_jsonl(content: &str) -> Result<usize, DatasetError> {
    let mut count = 0;
    for (i, line) in content.lines().enumerate() {
        let fail = |message: String| DatasetError::Jsonl { line: i + 1, message };
        if line.trim().is_empty() {
            return Err(fail("blank line".into()));
        }
        let record: PromptCompletion = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if !record.prompt.ends_with(PROMPT_SEPARATOR) {
            return Err(fail("prompt does not end with the separator".into()));
        }
        if record.completion != " 0" && record.completion != " 1" {
            return Err(fail(format!(
                "completion {:?} is not \" 0\" or \" 1\"",
                record.completion
            )));
        }
        count += 1;
    }
    Ok(count)
}
