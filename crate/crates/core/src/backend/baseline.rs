use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BackendError, CallError, Completer, CompletionParams};
use crate::dataset::{LabeledExample, PROMPT_SEPARATOR};
use crate::label::Label;
use crate::text;

/// Token log-odds scorer with add-one smoothing.
///
/// Only integer counts are stored, so the serialized form is exact and two
/// trainings on the same data produce identical bytes. The score of a text
/// is the document log prior plus, for every known token occurrence,
/// `ln((c1 + 1) / (N1 + V)) - ln((c0 + 1) / (N0 + V))`; the label is 1 when
/// the score is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub negative_docs: u64,
    pub positive_docs: u64,
    pub negative_tokens: u64,
    pub positive_tokens: u64,
    /// Per folded token: `[negative count, positive count]`.
    pub vocab: BTreeMap<String, [u64; 2]>,
}

impl BaselineModel {
    pub fn train<'a>(examples: impl IntoIterator<Item = &'a LabeledExample>) -> Result<Self, BackendError> {
        let mut model = BaselineModel {
            negative_docs: 0,
            positive_docs: 0,
            negative_tokens: 0,
            positive_tokens: 0,
            vocab: BTreeMap::new(),
        };
        for e in examples {
            let class = e.label.as_u8() as usize;
            let folded = text::fold(&e.text);
            let mut tokens = 0;
            for w in text::words(&folded) {
                model.vocab.entry(w.to_owned()).or_default()[class] += 1;
                tokens += 1;
            }
            match e.label {
                Label::Negative => {
                    model.negative_docs += 1;
                    model.negative_tokens += tokens;
                }
                Label::Positive => {
                    model.positive_docs += 1;
                    model.positive_tokens += tokens;
                }
            }
        }
        match (model.negative_docs, model.positive_docs) {
            (0, 0) => Err(BackendError::EmptyTrainingSet),
            (0, _) => Err(BackendError::SingleClass(Label::Positive)),
            (_, 0) => Err(BackendError::SingleClass(Label::Negative)),
            _ => Ok(model),
        }
    }

    pub fn score(&self, text: &str) -> f64 {
        let v = self.vocab.len() as f64;
        let n0 = self.negative_tokens as f64 + v;
        let n1 = self.positive_tokens as f64 + v;
        let prior = (self.positive_docs as f64 / self.negative_docs as f64).ln();
        let folded = text::fold(text);
        text::words(&folded)
            .filter_map(|w| self.vocab.get(w))
            .map(|[c0, c1]| ((*c1 as f64 + 1.0) / n1).ln() - ((*c0 as f64 + 1.0) / n0).ln())
            .sum::<f64>()
            + prior
    }

    pub fn classify(&self, text: &str) -> Label {
        if self.score(text) > 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn to_json(&self) -> Result<String, BackendError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BackendError> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Completer for BaselineModel {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, CallError> {
        let text = prompt.strip_suffix(PROMPT_SEPARATOR).unwrap_or(prompt);
        Ok(format!(" {}", self.classify(text)))
    }
}
