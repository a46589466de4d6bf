use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{BackendError, JobStatus};

/// One ledger line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub job_id: String,
    pub status: JobStatus,
    pub timestamp: String,
    /// Requests it took to obtain this status (1 when the first try worked).
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_tuned_model: Option<String>,
}

impl LedgerEntry {
    pub fn now(job_id: impl Into<String>, status: JobStatus, attempt: u32) -> Self {
        Self {
            job_id: job_id.into(),
            status,
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            attempt,
            fine_tuned_model: None,
        }
    }

    pub fn time(&self) -> Option<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.timestamp)
            .ok()
            .map(|t| t.with_timezone(&Utc))
    }
}

/// Append-only JSONL job ledger. A single process writes to it at a time.
#[derive(Debug, Clone)]
pub struct JobLedger {
    path: PathBuf,
}

impl JobLedger {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn err(&self, message: impl Into<String>) -> BackendError {
        BackendError::Ledger {
            path: self.path.display().to_string(),
            message: message.into(),
        }
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<(), BackendError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.err(e.to_string()))?;
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| self.err(e.to_string()))?;
        file.sync_data().map_err(|e| self.err(e.to_string()))
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>, BackendError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.err(e.to_string())),
        };
        BufReader::new(file)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(i, line)| {
                let line = line.map_err(|e| self.err(e.to_string()))?;
                serde_json::from_str(&line).map_err(|e| self.err(format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Most recent entry for `job_id`.
    pub fn latest(&self, job_id: &str) -> Result<Option<LedgerEntry>, BackendError> {
        Ok(self.entries()?.into_iter().rev().find(|e| e.job_id == job_id))
    }
}
