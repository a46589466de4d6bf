//! Binary text classifier backends.
//!
//! Every backend answers a prompt with a completion string; labels are
//! parsed from completions with one strict rule (trim, then exactly `0` or
//! `1`). Two backends ship: an HTTP client for a remote fine-tuning and
//! completion service, and a local token log-odds baseline used offline.

mod baseline;
mod ledger;
mod remote;
pub mod stub;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::label::{Label, Task};

pub use baseline::BaselineModel;
pub use ledger::{JobLedger, LedgerEntry};
pub use remote::{poll_job, submit_finetune, RemoteClient, RemoteConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("training needs both labels; only label {0} present")]
    SingleClass(Label),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{file}: {source}")]
    InvalidFile {
        file: String,
        #[source]
        source: DatasetError,
    },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("batch aborted: {0}")]
    Aborted(String),
    #[error("unknown job id `{0}`")]
    UnknownJob(String),
    #[error("invalid status transition for job `{job_id}`: {from:?} -> {to:?}")]
    StatusTransition {
        job_id: String,
        from: JobStatus,
        to: JobStatus,
    },
    #[error("ledger {path}: {message}")]
    Ledger { path: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }

    /// Transitions only move forward: pending -> running -> {succeeded, failed}.
    pub fn can_become(self, next: JobStatus) -> bool {
        if self == next {
            return true;
        }
        match self {
            JobStatus::Pending => true,
            JobStatus::Running => next.is_terminal(),
            JobStatus::Succeeded | JobStatus::Failed => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub batch_size: u32,
    pub learning_rate_multiplier: f64,
    #[serde(rename = "n_epochs")]
    pub epochs: u32,
    pub compute_classification_metrics: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate_multiplier: 0.1,
            epochs: 20,
            compute_classification_metrics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub task: Task,
    pub base_model: String,
    pub train_file: String,
    pub val_file: String,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub job_id: Option<String>,
    pub status: JobStatus,
    #[serde(default)]
    pub fine_tuned_model: Option<String>,
}

impl FineTuneJob {
    pub fn new(
        task: Task,
        base_model: impl Into<String>,
        train_file: impl Into<String>,
        val_file: impl Into<String>,
    ) -> Self {
        Self {
            task,
            base_model: base_model.into(),
            train_file: train_file.into(),
            val_file: val_file.into(),
            hyperparameters: Hyperparameters::default(),
            job_id: None,
            status: JobStatus::Pending,
            fine_tuned_model: None,
        }
    }
}

/// Inference settings. Defaults ask for deterministic one-token answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelHandle {
    Remote { model: String },
    Baseline(BaselineModel),
}

/// A classifier usable for one task; serialized as the model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub task: Task,
    pub handle: ModelHandle,
}

impl ClassifierModel {
    pub fn remote(task: Task, model: impl Into<String>) -> Result<Self, BackendError> {
        let model = model.into();
        if model.trim().is_empty() {
            return Err(BackendError::Config("remote model name is empty".into()));
        }
        Ok(Self {
            task,
            handle: ModelHandle::Remote { model },
        })
    }
}

/// Outcome of one classified item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum PredictionOutcome {
    Label(Label),
    /// The completion was not exactly `0` or `1` after trimming.
    ParseError(String),
    /// Retries were exhausted or the request was rejected.
    TransportFailure(String),
}

impl PredictionOutcome {
    pub fn label(&self) -> Option<Label> {
        match self {
            PredictionOutcome::Label(l) => Some(*l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    /// Item id, usually a rendered sentence ref.
    #[serde(rename = "ref")]
    pub id: String,
    pub raw_completion: Option<String>,
    pub outcome: PredictionOutcome,
}

/// Applies the label parse rule to a raw completion.
pub fn parse_completion(raw: &str) -> PredictionOutcome {
    match raw.parse::<Label>() {
        Ok(label) => PredictionOutcome::Label(label),
        Err(_) => PredictionOutcome::ParseError(raw.to_owned()),
    }
}

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    /// Worth retrying: connection failures, timeouts, 408/429/5xx.
    #[error("transient: {0}")]
    Transient(String),
    /// Not worth retrying, but specific to this request.
    #[error("rejected: {0}")]
    Rejected(String),
    /// Authentication or configuration problem; no request can succeed.
    #[error("fatal: {0}")]
    Fatal(String),
}

/// Anything that turns a prompt into a completion.
pub trait Completer: Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, CallError>;
}

/// Exponential backoff: wait `base * factor^(n-1)` after the n-th failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, failures: u32) -> Duration {
        self.base * self.factor.saturating_pow(failures.saturating_sub(1))
    }

    /// Runs `call` until it succeeds, fails non-transiently or the attempt
    /// budget is spent. Returns the result and the number of attempts made.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, CallError>) -> (Result<T, CallError>, u32) {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Err(CallError::Transient(msg)) if attempt < self.max_attempts => {
                    log::debug!("attempt {attempt} failed ({msg}); retrying");
                    thread::sleep(self.delay_after(attempt));
                }
                other => return (other, attempt),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Item to classify: `(id, text)`.
pub type BatchItem = (String, String);

/// Classifies every item, returning one prediction per input in input
/// order. Unparseable completions and exhausted retries become per-item
/// markers; only a fatal (auth/config) error aborts the batch.
pub fn classify_batch(
    completer: &dyn Completer,
    items: &[BatchItem],
    params: &CompletionParams,
    options: &BatchOptions,
) -> Result<Vec<Prediction>, BackendError> {
    params.validate()?;
    let workers = options.parallelism.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<String>> = Mutex::new(None);
    let mut slots: Vec<Option<Prediction>> = vec![None; items.len()];

    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    while !abort.load(Ordering::Relaxed) {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((id, text)) = items.get(i) else { break };
                        let prompt = crate::dataset::prompt_for(text);
                        let (result, attempts) = options.retry.run(|| completer.complete(&prompt, params));
                        let prediction = match result {
                            Ok(raw) => Prediction {
                                id: id.clone(),
                                outcome: parse_completion(&raw),
                                raw_completion: Some(raw),
                            },
                            Err(CallError::Fatal(msg)) => {
                                abort.store(true, Ordering::Relaxed);
                                fatal.lock().unwrap().get_or_insert(msg);
                                break;
                            }
                            Err(e) => Prediction {
                                id: id.clone(),
                                raw_completion: None,
                                outcome: PredictionOutcome::TransportFailure(format!(
                                    "{e} after {attempts} attempt(s)"
                                )),
                            },
                        };
                        done.push((i, prediction));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, p) in h.join().expect("classifier worker panicked") {
                slots[i] = Some(p);
            }
        }
    });

    if let Some(msg) = fatal.into_inner().unwrap() {
        return Err(BackendError::Aborted(msg));
    }
    Ok(slots.into_iter().map(|p| p.expect("every item classified")).collect())
}
