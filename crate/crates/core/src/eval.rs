//! Confusion-matrix metrics, percent agreement and consensus adjudication.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Prediction, PredictionOutcome};
use crate::label::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("resolutions must cover exactly the disagreements; missing: [{}], extraneous: [{}]", .missing.join(", "), .extraneous.join(", "))]
    Coverage {
        missing: Vec<String>,
        extraneous: Vec<String>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fn_ += 1,
        }
    }

    /// The matrix obtained by swapping every prediction and gold label.
    pub fn swapped(&self) -> Self {
        Self::new(self.tn, self.fn_, self.tp, self.fp)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// The four reliability metrics. `None` means undefined (zero denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub matrix: ConfusionMatrix,
    #[serde(default)]
    pub unscored: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Sensitivity `TP/(TP+FN)`, specificity `TN/(TN+FP)`, precision
/// `TP/(TP+FP)` and F1 as the harmonic mean of precision and sensitivity.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => f1_from_counts(cm),
    };
    MetricsReport {
        sensitivity,
        specificity,
        precision,
        f1,
        matrix: *cm,
        unscored: 0,
        notes: Vec::new(),
    }
}

/// `2TP / (2TP + FP + FN)`; algebraically equal to the harmonic mean.
pub fn f1_from_counts(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_)
}

/// A metric value as printed elsewhere, with the precision it was printed
/// at (`resolution` is one unit in the last printed digit, as a fraction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedValue {
    pub value: f64,
    pub resolution: f64,
}

impl ReportedValue {
    /// Parses a printed percentage such as `"84.31"` or `"64.4%"`.
    pub fn percent(printed: &str) -> Option<Self> {
        let printed = printed.trim().trim_end_matches('%');
        let decimals = printed.split_once('.').map_or(0, |(_, d)| d.len()) as i32;
        Some(Self {
            value: printed.parse::<f64>().ok()? / 100.0,
            resolution: 10f64.powi(-decimals) / 100.0,
        })
    }

    /// Parses a printed fraction such as `".73"` or `"0.891"`.
    pub fn fraction(printed: &str) -> Option<Self> {
        let printed = printed.trim();
        let decimals = printed.split_once('.').map_or(0, |(_, d)| d.len()) as i32;
        Some(Self {
            value: printed.parse().ok()?,
            resolution: 10f64.powi(-decimals),
        })
    }

    /// True when `computed` rounds to this printed value.
    pub fn is_consistent_with(&self, computed: f64) -> bool {
        (computed - self.value).abs() <= self.resolution / 2.0 + 1e-12
    }
}

/// Externally reported metrics to check a matrix against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub sensitivity: Option<ReportedValue>,
    pub specificity: Option<ReportedValue>,
    pub precision: Option<ReportedValue>,
    pub f1: Option<ReportedValue>,
}

impl MetricsReport {
    /// Appends a note for every metric whose computed value does not round
    /// to the reported one.
    pub fn note_discrepancies(&mut self, reference: &ReferenceMetrics) {
        let pairs = [
            ("sensitivity", self.sensitivity, reference.sensitivity),
            ("specificity", self.specificity, reference.specificity),
            ("precision", self.precision, reference.precision),
            ("f1", self.f1, reference.f1),
        ];
        for (name, computed, reported) in pairs {
            if let (Some(c), Some(r)) = (computed, reported) {
                if !r.is_consistent_with(c) {
                    self.notes.push(format!(
                        "{name}: computed {:.2}% from the matrix, reference reports {:.2}% ({:+.2} pp)",
                        100.0 * c,
                        100.0 * r.value,
                        100.0 * (r.value - c)
                    ));
                }
            }
        }
    }
}

/// Gold label for one item id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    #[serde(rename = "ref")]
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPredictions {
    pub matrix: ConfusionMatrix,
    /// Items whose prediction failed to parse or never came back.
    pub unscored: Vec<String>,
}

/// Joins predictions to gold labels by item id and counts the four cells.
/// Failed predictions are excluded from the matrix and listed as unscored.
pub fn confusion(predictions: &[Prediction], gold: &[GoldLabel]) -> Result<ScoredPredictions, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::Alignment(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let mut gold_by_id = HashMap::with_capacity(gold.len());
    for g in gold {
        if gold_by_id.insert(g.id.as_str(), g.label).is_some() {
            return Err(EvalError::Alignment(format!("duplicate gold ref `{}`", g.id)));
        }
    }
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut matrix = ConfusionMatrix::default();
    let mut unscored = Vec::new();
    for p in predictions {
        let gold_label = *gold_by_id
            .get(p.id.as_str())
            .ok_or_else(|| EvalError::Alignment(format!("prediction ref `{}` has no gold label", p.id)))?;
        if !seen.insert(p.id.as_str()) {
            return Err(EvalError::Alignment(format!("duplicate prediction ref `{}`", p.id)));
        }
        match p.outcome.label() {
            Some(label) => matrix.record(label, gold_label),
            None => unscored.push(p.id.clone()),
        }
    }
    Ok(ScoredPredictions { matrix, unscored })
}

/// Metrics with the unscored tally filled in.
pub fn evaluate(predictions: &[Prediction], gold: &[GoldLabel]) -> Result<MetricsReport, EvalError> {
    let scored = confusion(predictions, gold)?;
    let mut report = metrics(&scored.matrix);
    report.unscored = scored.unscored.len() as u64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub agreements: usize,
    /// `100 * agreements / items`; `None` for zero items.
    pub percent: Option<f64>,
    pub disagreements: Vec<String>,
}

fn check_aligned<L>(a: &[(String, L)], b: &[(String, L)]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Alignment(format!("{} vs {} coded items", a.len(), b.len())));
    }
    if let Some((i, ((ra, _), (rb, _)))) = a.iter().zip(b).enumerate().find(|(_, ((ra, _), (rb, _)))| ra != rb) {
        return Err(EvalError::Alignment(format!("item {i}: ref `{ra}` vs `{rb}`")));
    }
    Ok(())
}

/// Exact-match percent agreement between two coders over aligned items.
pub fn agreement<L: PartialEq>(coder_a: &[(String, L)], coder_b: &[(String, L)]) -> Result<AgreementReport, EvalError> {
    check_aligned(coder_a, coder_b)?;
    let disagreements: Vec<String> = coder_a
        .iter()
        .zip(coder_b)
        .filter(|((_, la), (_, lb))| la != lb)
        .map(|((r, _), _)| r.clone())
        .collect();
    let items = coder_a.len();
    let agreements = items - disagreements.len();
    Ok(AgreementReport {
        items,
        agreements,
        percent: (items > 0).then(|| 100.0 * agreements as f64 / items as f64),
        disagreements,
    })
}

/// Final labels: agreed items keep the shared label, disagreements take
/// the consensus resolution. `resolutions` must cover exactly the
/// disagreement refs.
pub fn adjudicate<L: PartialEq + Clone>(
    coder_a: &[(String, L)],
    coder_b: &[(String, L)],
    resolutions: &BTreeMap<String, L>,
) -> Result<Vec<(String, L)>, EvalError> {
    let report = agreement(coder_a, coder_b)?;
    let disputed: HashSet<&str> = report.disagreements.iter().map(String::as_str).collect();
    let missing: Vec<String> = report
        .disagreements
        .iter()
        .filter(|r| !resolutions.contains_key(*r))
        .cloned()
        .collect();
    let extraneous: Vec<String> = resolutions
        .keys()
        .filter(|r| !disputed.contains(r.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extraneous.is_empty() {
        return Err(EvalError::Coverage { missing, extraneous });
    }
    Ok(coder_a
        .iter()
        .map(|(r, label)| match resolutions.get(r) {
            Some(resolved) => (r.clone(), resolved.clone()),
            None => (r.clone(), label.clone()),
        })
        .collect())
}

/// Prediction-file cell for failed items.
const PARSE_ERROR: &str = "error:parse";
const TRANSPORT_ERROR: &str = "error:transport";

/// Writes `ref,label` rows; failed items carry `error:parse` or
/// `error:transport` in the label column.
pub fn write_predictions_csv<W: Write>(out: W, predictions: &[Prediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ref", "label"])?;
    for p in predictions {
        let cell = match &p.outcome {
            PredictionOutcome::Label(l) => l.to_string(),
            PredictionOutcome::ParseError(_) => PARSE_ERROR.to_owned(),
            PredictionOutcome::TransportFailure(_) => TRANSPORT_ERROR.to_owned(),
        };
        w.write_record([p.id.as_str(), &cell])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(input: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(input).records().enumerate() {
        let row = row?;
        let (id, cell) = (row.get(0).unwrap_or_default(), row.get(1).unwrap_or_default());
        let outcome = match cell {
            PARSE_ERROR => PredictionOutcome::ParseError(String::new()),
            TRANSPORT_ERROR => PredictionOutcome::TransportFailure(String::new()),
            other => PredictionOutcome::Label(other.parse().map_err(|e: crate::label::LabelParseError| {
                EvalError::BadRow {
                    row: i + 2,
                    message: e.to_string(),
                }
            })?),
        };
        out.push(Prediction {
            id: id.to_owned(),
            raw_completion: None,
            outcome,
        });
    }
    Ok(out)
}

pub fn write_gold_csv<W: Write>(out: W, gold: &[GoldLabel]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for g in gold {
        w.serialize(g)?;
    }
    if gold.is_empty() {
        w.write_record(["ref", "label"])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_gold_csv<R: Read>(input: R) -> Result<Vec<GoldLabel>, EvalError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(EvalError::from))
        .collect()
}
