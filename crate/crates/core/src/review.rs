//! Terminal review pass over filtered candidates with an append-only,
//! crash-safe decisions log.
//!
//! Each confirmed decision is written and synced before the next candidate
//! is shown. Replaying the log keeps the last decision per `(ref, coder)`,
//! and a resumed session skips candidates the coder already decided.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;
use crate::filter::CandidateSentence;
use crate::label::{Label, Task};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("decisions log {path}, line {line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("decisions log {0} is locked by another session (remove {0}.lock if stale)")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("terminal: {0}")]
    Terminal(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewLabel {
    Engaging,
    NotEngaging,
    Gain,
    Loss,
}

impl ReviewLabel {
    /// Binary label for `task`; `None` when the decision does not apply
    /// (e.g. a discarded false positive in the frame task).
    pub fn for_task(self, task: Task) -> Option<Label> {
        match (task, self) {
            (Task::Identification, ReviewLabel::Engaging | ReviewLabel::Gain | ReviewLabel::Loss) => {
                Some(Label::Positive)
            }
            (Task::Identification, ReviewLabel::NotEngaging) => Some(Label::Negative),
            (Task::Frame, ReviewLabel::Gain) => Some(Label::Positive),
            (Task::Frame, ReviewLabel::Loss) => Some(Label::Negative),
            (Task::Frame, _) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    #[serde(rename = "ref")]
    pub reference: SentenceRef,
    pub coder_id: String,
    pub label: ReviewLabel,
    /// Corrected copy of the sentence; the original is never modified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_text: Option<String>,
    pub timestamp: String,
}

pub trait Clock {
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

/// Always returns the same timestamp; for scripted sessions and goldens.
pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

/// The append-only decisions log.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    entries: Vec<ReviewDecision>,
}

impl DecisionLog {
    /// Loads (or starts) a log. Any unparseable line is an error naming it.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        let path = path.into();
        let entries = match File::open(&path) {
            Ok(f) => read_decisions(BufReader::new(f), &path)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(source) => return Err(ReviewError::Io { path, source }),
        };
        Ok(Self { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[ReviewDecision] {
        &self.entries
    }

    /// Appends and syncs one decision.
    pub fn append(&mut self, decision: ReviewDecision) -> Result<(), ReviewError> {
        let io = |source| ReviewError::Io {
            path: self.path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        let mut line = serde_json::to_vec(&decision).expect("decision serializes");
        line.push(b'\n');
        file.write_all(&line).map_err(io)?;
        file.sync_data().map_err(io)?;
        self.entries.push(decision);
        Ok(())
    }

    /// Current decision per `(ref, coder)`; later entries win.
    pub fn state(&self) -> BTreeMap<(SentenceRef, String), &ReviewDecision> {
        let mut state = BTreeMap::new();
        for d in &self.entries {
            state.insert((d.reference.clone(), d.coder_id.clone()), d);
        }
        state
    }

    pub fn decided_by(&self, coder_id: &str) -> HashSet<SentenceRef> {
        self.entries
            .iter()
            .filter(|d| d.coder_id == coder_id)
            .map(|d| d.reference.clone())
            .collect()
    }

    /// One coder's final labels as `(ref, label)` in `order`; refs the coder
    /// has not decided are omitted.
    pub fn coded(&self, coder_id: &str, order: &[SentenceRef]) -> Vec<(String, ReviewLabel)> {
        let state = self.state();
        order
            .iter()
            .filter_map(|r| {
                state
                    .get(&(r.clone(), coder_id.to_owned()))
                    .map(|d| (r.to_string(), d.label))
            })
            .collect()
    }

    /// One coder's final decisions, keyed by ref.
    pub fn final_decisions(&self, coder_id: &str) -> BTreeMap<SentenceRef, &ReviewDecision> {
        self.state()
            .into_iter()
            .filter(|((_, c), _)| c == coder_id)
            .map(|((r, _), d)| (r, d))
            .collect()
    }
}

fn read_decisions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ReviewDecision>, ReviewError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ReviewError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let decision = serde_json::from_str(&line).map_err(|e| ReviewError::CorruptLog {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(decision);
    }
    Ok(out)
}

/// Exclusive lock on a log, held as `<log>.lock` for the session's life.
#[derive(Debug)]
pub struct LogLock {
    path: PathBuf,
}

impl LogLock {
    pub fn acquire(log: &Path) -> Result<Self, ReviewError> {
        let mut name = log.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ReviewError::Locked(log.to_path_buf())),
            Err(source) => Err(ReviewError::Io { path, source }),
        }
    }
}

impl Drop for LogLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub decided: usize,
    pub skipped: usize,
    pub remaining: usize,
    pub quit: bool,
}

enum Command {
    Decide(ReviewLabel, Option<String>),
    Skip,
    Quit,
}

fn parse_command(line: &str, task: Task) -> Option<Command> {
    let line = line.trim();
    let (word, rest) = match line.split_once(char::is_whitespace) {
        Some((w, r)) => (w, Some(r.trim().to_owned()).filter(|r| !r.is_empty())),
        None => (line, None),
    };
    let label = match (task, word) {
        (_, "s") if rest.is_none() => return Some(Command::Skip),
        (_, "q") if rest.is_none() => return Some(Command::Quit),
        (Task::Identification, "k") => ReviewLabel::Engaging,
        (Task::Frame, "g") => ReviewLabel::Gain,
        (Task::Frame, "l") => ReviewLabel::Loss,
        (_, "d") if rest.is_none() => ReviewLabel::NotEngaging,
        _ => return None,
    };
    Some(Command::Decide(label, rest))
}

fn help(task: Task) -> &'static str {
    match task {
        Task::Identification => "k [corrected text] = engaging message, d = discard, s = skip, q = quit",
        Task::Frame => "g [corrected text] = gain, l [corrected text] = loss, d = not a message, s = skip, q = quit",
    }
}

/// Presents every candidate `coder_id` has not decided yet, in order, and
/// appends each confirmed decision to `log` immediately. Ends on `q` or at
/// end of input.
pub fn review_session<R: BufRead, W: Write>(
    candidates: &[CandidateSentence],
    coder_id: &str,
    task: Task,
    log: &mut DecisionLog,
    clock: &dyn Clock,
    mut input: R,
    mut output: W,
) -> Result<SessionSummary, ReviewError> {
    let decided = log.decided_by(coder_id);
    let queue: Vec<&CandidateSentence> = candidates
        .iter()
        .filter(|c| !decided.contains(&c.sentence.reference))
        .collect();
    let mut summary = SessionSummary::default();
    writeln!(output, "{} candidate(s) to review. {}", queue.len(), help(task))?;

    let mut position = 0;
    'queue: while position < queue.len() {
        let c = queue[position];
        writeln!(
            output,
            "\n[{}/{}] {}  (matched: {})\n  {}",
            position + 1,
            queue.len(),
            c.sentence.reference,
            c.matched_terms.join(", "),
            c.sentence.text
        )?;
        loop {
            write!(output, "> ")?;
            output.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                summary.quit = true;
                break 'queue;
            }
            match parse_command(&line, task) {
                Some(Command::Decide(label, corrected_text)) => {
                    log.append(ReviewDecision {
                        reference: c.sentence.reference.clone(),
                        coder_id: coder_id.to_owned(),
                        label,
                        corrected_text,
                        timestamp: clock.now(),
                    })?;
                    summary.decided += 1;
                    break;
                }
                Some(Command::Skip) => {
                    summary.skipped += 1;
                    break;
                }
                Some(Command::Quit) => {
                    summary.quit = true;
                    break 'queue;
                }
                None => writeln!(output, "? {}", help(task))?,
            }
        }
        position += 1;
    }
    summary.remaining = queue.len() - summary.decided;
    writeln!(
        output,
        "\n{} decided, {} remaining.",
        summary.decided, summary.remaining
    )?;
    Ok(summary)
}
