//! HTTP client for a remote fine-tuning/completion service.
//!
//! Wire contract (JSON bodies, optional `Authorization: Bearer` header):
//!
//! | request                         | body                                           | reply                                   |
//! |---------------------------------|------------------------------------------------|-----------------------------------------|
//! | `POST {endpoint}/files`         | `{purpose, filename, content}`                 | `{id}`                                  |
//! | `POST {endpoint}/fine_tuning/jobs` | `{model, training_file, validation_file, hyperparameters, suffix}` | `{id, status}`  |
//! | `GET {endpoint}/fine_tuning/jobs/{id}` | -                                       | `{id, status, fine_tuned_model}`        |
//! | `POST {endpoint}/completions`   | `{model, prompt, temperature, top_p, max_tokens}` | `{choices: [{text}]}`                |
//!
//! 401/403 are fatal, 408/429/5xx and connection failures are transient,
//! any other 4xx rejects that request only.

use std::path::Path;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, CallError, Completer, CompletionParams, FineTuneJob, Hyperparameters, JobLedger, JobStatus,
    LedgerEntry, RetryPolicy,
};
use crate::dataset;

fn default_api_key_env() -> String {
    "ENGAGE_API_KEY".into()
}

fn default_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8089/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct FileUpload {
    pub purpose: String,
    pub filename: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct IdReply {
    pub id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct JobRequest {
    pub model: String,
    pub training_file: String,
    pub validation_file: String,
    pub hyperparameters: Hyperparameters,
    pub suffix: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct JobReply {
    pub id: String,
    pub status: JobStatus,
    #[serde(default)]
    pub fine_tuned_model: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Choice {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CompletionReply {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    http: Client,
    endpoint: String,
    api_key: Option<String>,
}

impl RemoteClient {
    /// Builds a client; the API key is read from `config.api_key_env` if set.
    pub fn new(config: &RemoteConfig) -> Result<Self, BackendError> {
        if config.endpoint.trim().is_empty() {
            return Err(BackendError::Config("backend endpoint is empty".into()));
        }
        let http = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: config.endpoint.trim_end_matches('/').to_owned(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint, path)
    }

    fn send<T: DeserializeOwned>(&self, request: RequestBuilder) -> Result<T, CallError> {
        let request = match &self.api_key {
            Some(key) => request.bearer_auth(key),
            None => request,
        };
        let response = request.send().map_err(|e| CallError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_success() {
            return response
                .json::<T>()
                .map_err(|e| CallError::Rejected(format!("malformed reply: {e}")));
        }
        let body = response.text().unwrap_or_default();
        let message = format!("{status}: {}", body.trim());
        Err(match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => CallError::Fatal(message),
            StatusCode::REQUEST_TIMEOUT | StatusCode::TOO_MANY_REQUESTS => CallError::Transient(message),
            s if s.is_server_error() => CallError::Transient(message),
            _ => CallError::Rejected(message),
        })
    }

    pub fn upload_file(&self, filename: &str, content: &str) -> Result<String, CallError> {
        let body = FileUpload {
            purpose: "fine-tune".into(),
            filename: filename.into(),
            content: content.into(),
        };
        self.send::<IdReply>(self.http.post(self.url("files")).json(&body))
            .map(|r| r.id)
    }

    pub(crate) fn create_job(&self, request: &JobRequest) -> Result<JobReply, CallError> {
        self.send(self.http.post(self.url("fine_tuning/jobs")).json(request))
    }

    pub(crate) fn get_job(&self, job_id: &str) -> Result<JobReply, CallError> {
        self.send(self.http.get(self.url(&format!("fine_tuning/jobs/{job_id}"))))
    }

    pub fn completion(&self, model: &str, prompt: &str, params: &CompletionParams) -> Result<String, CallError> {
        let body = CompletionRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
        };
        let reply: CompletionReply = self.send(self.http.post(self.url("completions")).json(&body))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| CallError::Rejected("reply has no choices".into()))
    }

    /// Completer bound to one fine-tuned model.
    pub fn completer<'a>(&'a self, model: &'a str) -> impl Completer + 'a {
        RemoteCompleter { client: self, model }
    }
}

struct RemoteCompleter<'a> {
    client: &'a RemoteClient,
    model: &'a str,
}

impl Completer for RemoteCompleter<'_> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, CallError> {
        self.client.completion(self.model, prompt, params)
    }
}

fn call_error(e: CallError, attempts: u32) -> BackendError {
    match e {
        CallError::Transient(message) => BackendError::Transport { attempts, message },
        CallError::Rejected(message) => BackendError::Rejected(message),
        CallError::Fatal(message) => BackendError::Auth(message),
    }
}

fn read_training_file(path: &Path) -> Result<String, BackendError> {
    let invalid = |source| BackendError::InvalidFile {
        file: path.display().to_string(),
        source,
    };
    let content = std::fs::read_to_string(path).map_err(|e| {
        invalid(dataset::DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    dataset::validate_jsonl(&content).map_err(invalid)?;
    Ok(content)
}

/// Validates and uploads both JSONL files, creates the fine-tuning job and
/// records it in the ledger. The ledger entry's `attempt` is the number of
/// job-creation requests it took.
pub fn submit_finetune(
    client: &RemoteClient,
    train: &Path,
    val: &Path,
    mut job: FineTuneJob,
    ledger: &JobLedger,
    retry: &RetryPolicy,
) -> Result<FineTuneJob, BackendError> {
    let train_content = read_training_file(train)?;
    let val_content = read_training_file(val)?;

    let upload = |path: &Path, content: &str| {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (result, attempts) = retry.run(|| client.upload_file(&name, content));
        result.map_err(|e| call_error(e, attempts))
    };
    let training_file = upload(train, &train_content)?;
    let validation_file = upload(val, &val_content)?;

    let request = JobRequest {
        model: job.base_model.clone(),
        training_file,
        validation_file,
        hyperparameters: job.hyperparameters.clone(),
        suffix: job.task.as_str().into(),
    };
    let (result, attempts) = retry.run(|| client.create_job(&request));
    let reply = result.map_err(|e| call_error(e, attempts))?;
    if reply.id.is_empty() {
        return Err(BackendError::Rejected("service returned an empty job id".into()));
    }

    job.job_id = Some(reply.id.clone());
    job.status = reply.status;
    ledger.append(&LedgerEntry::now(&reply.id, reply.status, attempts))?;
    Ok(job)
}

/// Refreshes a job's status. Terminal statuses are sticky: once the ledger
/// holds one, the service is not asked again.
pub fn poll_job(
    client: &RemoteClient,
    ledger: &JobLedger,
    job_id: &str,
    retry: &RetryPolicy,
) -> Result<LedgerEntry, BackendError> {
    let current = ledger
        .latest(job_id)?
        .ok_or_else(|| BackendError::UnknownJob(job_id.to_owned()))?;
    if current.status.is_terminal() {
        return Ok(current);
    }
    let (result, attempts) = retry.run(|| client.get_job(job_id));
    let reply = result.map_err(|e| call_error(e, attempts))?;
    if !current.status.can_become(reply.status) {
        return Err(BackendError::StatusTransition {
            job_id: job_id.to_owned(),
            from: current.status,
            to: reply.status,
        });
    }
    let mut entry = LedgerEntry::now(job_id, reply.status, attempts);
    entry.fine_tuned_model = reply.fine_tuned_model;
    ledger.append(&entry)?;
    Ok(entry)
}
