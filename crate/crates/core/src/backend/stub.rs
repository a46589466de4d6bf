//! In-process HTTP server implementing the remote service contract, for
//! tests and offline demos. Faults are scripted per route.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::remote::{Choice, CompletionReply, CompletionRequest, FileUpload, IdReply, JobReply, JobRequest};
use super::{BaselineModel, JobStatus};
use crate::dataset::{self, PROMPT_SEPARATOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Files,
    CreateJob,
    GetJob,
    Completions,
    Unknown,
}

/// One handled request, in arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StubRecord {
    pub route: Route,
    pub status: u16,
}

type CompletionFn = dyn Fn(&str) -> String + Send + Sync;

/// Scripted behaviour of the stub.
pub struct StubScript {
    /// Required bearer token; `None` accepts unauthenticated requests.
    pub api_key: Option<String>,
    /// Number of leading requests per route answered with 503.
    pub transient_failures: BTreeMap<Route, u32>,
    /// Status returned by the n-th poll of a job (the last one repeats).
    pub job_statuses: Vec<JobStatus>,
    /// Maps the prompt's sentence text to a completion.
    pub completion: Box<CompletionFn>,
}

impl Default for StubScript {
    fn default() -> Self {
        Self {
            api_key: None,
            transient_failures: BTreeMap::new(),
            job_statuses: vec![JobStatus::Running, JobStatus::Succeeded],
            completion: Box::new(|_| " 1".to_owned()),
        }
    }
}

impl StubScript {
    pub fn failing(mut self, route: Route, times: u32) -> Self {
        self.transient_failures.insert(route, times);
        self
    }

    pub fn with_completion(mut self, f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        self.completion = Box::new(f);
        self
    }

    /// Answers completions with a baseline model's label.
    pub fn with_baseline(self, model: BaselineModel) -> Self {
        self.with_completion(move |text| format!(" {}", model.classify(text)))
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

#[derive(Default)]
struct StubState {
    seen: BTreeMap<Route, u32>,
    files: HashSet<String>,
    jobs: HashMap<String, (String, usize)>,
    next_id: u64,
    transcript: Vec<StubRecord>,
}

pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    state: Arc<Mutex<StubState>>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Starts serving on `addr` (use port 0 for an ephemeral port).
    pub fn start(addr: &str, script: StubScript) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub is not bound to an IP address"))?;
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(StubState::default()));
        let worker = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &script, &state);
                }
            })
        };
        Ok(Self {
            server,
            addr,
            state,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to put in a client config.
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn transcript(&self) -> Vec<StubRecord> {
        self.state.lock().unwrap().transcript.clone()
    }

    /// Blocks serving requests until the process exits.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn route_of(method: &Method, url: &str) -> (Route, Option<String>) {
    let path = url.split('?').next().unwrap_or_default();
    let rest = path.strip_prefix("/v1/").unwrap_or_default();
    match (method, rest) {
        (Method::Post, "files") => (Route::Files, None),
        (Method::Post, "fine_tuning/jobs") => (Route::CreateJob, None),
        (Method::Post, "completions") => (Route::Completions, None),
        (Method::Get, r) => match r.strip_prefix("fine_tuning/jobs/") {
            Some(id) if !id.is_empty() => (Route::GetJob, Some(id.to_owned())),
            _ => (Route::Unknown, None),
        },
        _ => (Route::Unknown, None),
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": { "message": message } }).to_string()
}

fn json<T: Serialize>(value: &T) -> (u16, String) {
    (200, serde_json::to_string(value).expect("serializable reply"))
}

fn handle(mut request: Request, script: &StubScript, state: &Mutex<StubState>) {
    let (route, job_id) = route_of(request.method(), request.url());
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let authorized = match &script.api_key {
        None => true,
        Some(key) => request
            .headers()
            .iter()
            .any(|h| h.field.equiv("Authorization") && h.value.as_str() == format!("Bearer {key}")),
    };

    let (status, reply) = {
        let mut st = state.lock().unwrap();
        let seen = st.seen.entry(route).or_default();
        *seen += 1;
        let nth = *seen;
        let (status, reply) = if !authorized {
            (401, error_body("invalid api key"))
        } else if nth <= script.transient_failures.get(&route).copied().unwrap_or(0) {
            (503, error_body("temporarily unavailable"))
        } else {
            respond(route, job_id, &body, script, &mut st)
        };
        st.transcript.push(StubRecord { route, status });
        (status, reply)
    };

    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let _ = request.respond(
        Response::from_string(reply)
            .with_status_code(status)
            .with_header(header),
    );
}

fn respond(route: Route, job_id: Option<String>, body: &str, script: &StubScript, st: &mut StubState) -> (u16, String) {
    match route {
        Route::Files => {
            let upload: FileUpload = match serde_json::from_str(body) {
                Ok(u) => u,
                Err(e) => return (400, error_body(&e.to_string())),
            };
            if let Err(e) = dataset::validate_jsonl(&upload.content) {
                return (400, error_body(&format!("{}: {e}", upload.filename)));
            }
            st.next_id += 1;
            let id = format!("file-{}", st.next_id);
            st.files.insert(id.clone());
            json(&IdReply { id })
        }
        Route::CreateJob => {
            let req: JobRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return (400, error_body(&e.to_string())),
            };
            for f in [&req.training_file, &req.validation_file] {
                if !st.files.contains(f) {
                    return (400, error_body(&format!("unknown file `{f}`")));
                }
            }
            st.next_id += 1;
            let id = format!("ftjob-{}", st.next_id);
            st.jobs.insert(
                id.clone(),
                (format!("{}:ft-{}-{}", req.model, req.suffix, st.next_id), 0),
            );
            json(&JobReply {
                id,
                status: JobStatus::Pending,
                fine_tuned_model: None,
            })
        }
        Route::GetJob => {
            let id = job_id.unwrap_or_default();
            let Some((model, polls)) = st.jobs.get_mut(&id) else {
                return (404, error_body(&format!("no job `{id}`")));
            };
            let status = script
                .job_statuses
                .get(*polls)
                .or(script.job_statuses.last())
                .copied()
                .unwrap_or(JobStatus::Pending);
            *polls += 1;
            json(&JobReply {
                id,
                status,
                fine_tuned_model: (status == JobStatus::Succeeded).then(|| model.clone()),
            })
        }
        Route::Completions => {
            let req: CompletionRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return (400, error_body(&e.to_string())),
            };
            let text = req.prompt.strip_suffix(PROMPT_SEPARATOR).unwrap_or(&req.prompt);
            json(&CompletionReply {
                choices: vec![Choice {
                    text: (script.completion)(text),
                }],
            })
        }
        Route::Unknown => (404, error_body("no such route")),
    }
}
