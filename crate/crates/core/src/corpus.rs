//! Transcript ingestion and the lesson corpus.
//!
//! Transcripts are UTF-8 text files with one transcription line per file
//! line. Lesson metadata (teacher, group, grade, trimester) lives in a CSV
//! sidecar manifest with the header
//! `lesson_id,teacher_id,group_id,grade,trimester,date,path`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter;
use crate::text;

pub const GRADES: std::ops::RangeInclusive<u8> = 9..=12;
pub const TRIMESTERS: std::ops::RangeInclusive<u8> = 1..=3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("lesson `{lesson_id}`: grade {grade} outside 9..=12")]
    InvalidGrade { lesson_id: String, grade: u8 },
    #[error("lesson `{lesson_id}`: trimester {trimester} outside 1..=3")]
    InvalidTrimester { lesson_id: String, trimester: u8 },
    #[error("lesson id must not be empty")]
    EmptyLessonId,
    #[error("duplicate lesson id `{0}`")]
    DuplicateLesson(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("manifest {path}, row {row}: bad date `{value}` (expected YYYY-MM-DD)")]
    BadDate { path: PathBuf, row: usize, value: String },
    #[error("invalid sentence ref `{0}` (expected lesson_id:line:sentence)")]
    BadRef(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonMetadata {
    pub lesson_id: String,
    pub teacher_id: String,
    pub group_id: String,
    pub grade: u8,
    pub trimester: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_date: Option<NaiveDate>,
}

impl LessonMetadata {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.lesson_id.is_empty() {
            return Err(CorpusError::EmptyLessonId);
        }
        if !GRADES.contains(&self.grade) {
            return Err(CorpusError::InvalidGrade {
                lesson_id: self.lesson_id.clone(),
                grade: self.grade,
            });
        }
        if !TRIMESTERS.contains(&self.trimester) {
            return Err(CorpusError::InvalidTrimester {
                lesson_id: self.lesson_id.clone(),
                trimester: self.trimester,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineTerminator {
    #[default]
    Lf,
    CrLf,
}

impl LineTerminator {
    pub fn as_str(self) -> &'static str {
        match self {
            LineTerminator::Lf => "\n",
            LineTerminator::CrLf => "\r\n",
        }
    }
}

/// One lesson transcript. Empty lines are kept so that `line_index`
/// always matches the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonRecord {
    pub metadata: LessonMetadata,
    pub lines: Vec<String>,
    #[serde(default)]
    pub terminator: LineTerminator,
    #[serde(default)]
    pub trailing_terminator: bool,
}

impl LessonRecord {
    pub fn id(&self) -> &str {
        &self.metadata.lesson_id
    }

    /// Re-serializes the lines with the terminator seen at ingestion.
    pub fn to_source(&self) -> String {
        let mut out = self.lines.join(self.terminator.as_str());
        if self.trailing_terminator {
            out.push_str(self.terminator.as_str());
        }
        out
    }

    pub fn sentences(&self) -> Vec<filter::Sentence> {
        self.lines
            .iter()
            .enumerate()
            .flat_map(|(i, line)| filter::segment(line, self.id(), i))
            .collect()
    }
}

/// Splits `source_text` into lines and attaches validated metadata.
pub fn ingest_lesson(source_text: &str, metadata: LessonMetadata) -> Result<LessonRecord, CorpusError> {
    metadata.validate()?;
    let text = text::canonicalize(source_text);
    let terminator = match text.find('\n') {
        Some(i) if i > 0 && text.as_bytes()[i - 1] == b'\r' => LineTerminator::CrLf,
        _ => LineTerminator::Lf,
    };
    let mut lines: Vec<String> = if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').map(str::to_owned).collect()
    };
    if terminator == LineTerminator::CrLf {
        for line in &mut lines {
            if line.ends_with('\r') {
                line.pop();
            }
        }
    }
    let trailing_terminator = text.ends_with('\n');
    if trailing_terminator {
        lines.pop();
    }
    Ok(LessonRecord {
        metadata,
        lines,
        terminator,
        trailing_terminator,
    })
}

pub fn ingest_file(path: &Path, metadata: LessonMetadata) -> Result<LessonRecord, CorpusError> {
    metadata.validate()?;
    let source = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_lesson(&source, metadata)
}

/// Provenance of a sentence: lesson, 0-based line, 0-based sentence within
/// the line. Rendered as `lesson_id:line:sentence`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub lesson_id: String,
    pub line_index: usize,
    pub sentence_index: usize,
}

impl SentenceRef {
    pub fn new(lesson_id: impl Into<String>, line_index: usize, sentence_index: usize) -> Self {
        Self {
            lesson_id: lesson_id.into(),
            line_index,
            sentence_index,
        }
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lesson_id, self.line_index, self.sentence_index)
    }
}

impl FromStr for SentenceRef {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadRef(s.to_owned());
        let mut parts = s.rsplitn(3, ':');
        let sentence = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let line = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let lesson = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        Ok(SentenceRef::new(lesson, line, sentence))
    }
}

/// Immutable collection of lessons keyed by lesson id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LessonRecord>", into = "Vec<LessonRecord>")]
pub struct Corpus {
    lessons: BTreeMap<String, LessonRecord>,
}

impl Corpus {
    pub fn from_lessons(lessons: impl IntoIterator<Item = LessonRecord>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for lesson in lessons {
            let id = lesson.id().to_owned();
            if map.insert(id.clone(), lesson).is_some() {
                return Err(CorpusError::DuplicateLesson(id));
            }
        }
        Ok(Self { lessons: map })
    }

    pub fn get(&self, lesson_id: &str) -> Option<&LessonRecord> {
        self.lessons.get(lesson_id)
    }

    /// Lessons in ascending lesson-id order.
    pub fn lessons(&self) -> impl Iterator<Item = &LessonRecord> {
        self.lessons.values()
    }

    pub fn len(&self) -> usize {
        self.lessons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lessons.is_empty()
    }

    pub fn sentences(&self) -> Vec<filter::Sentence> {
        self.lessons.values().flat_map(LessonRecord::sentences).collect()
    }

    /// Looks up the sentence text a ref points at.
    pub fn sentence(&self, r: &SentenceRef) -> Option<filter::Sentence> {
        let line = self.get(&r.lesson_id)?.lines.get(r.line_index)?;
        filter::segment(line, &r.lesson_id, r.line_index)
            .into_iter()
            .nth(r.sentence_index)
    }

    pub fn metadata(&self, lesson_id: &str) -> Option<&LessonMetadata> {
        self.get(lesson_id).map(|l| &l.metadata)
    }
}

impl TryFrom<Vec<LessonRecord>> for Corpus {
    type Error = CorpusError;

    fn try_from(lessons: Vec<LessonRecord>) -> Result<Self, Self::Error> {
        Corpus::from_lessons(lessons)
    }
}

impl From<Corpus> for Vec<LessonRecord> {
    fn from(corpus: Corpus) -> Self {
        corpus.lessons.into_values().collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub lessons: usize,
    pub lines: usize,
    pub sentences: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, rhs: Self) -> Self {
        CorpusStats {
            lessons: self.lessons + rhs.lessons,
            lines: self.lines + rhs.lines,
            sentences: self.sentences + rhs.sentences,
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    corpus
        .lessons()
        .map(|l| CorpusStats {
            lessons: 1,
            lines: l.lines.len(),
            sentences: l
                .lines
                .iter()
                .enumerate()
                .map(|(i, line)| filter::segment(line, l.id(), i).len())
                .sum(),
        })
        .fold(CorpusStats::default(), Add::add)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    lesson_id: String,
    teacher_id: String,
    group_id: String,
    grade: u8,
    trimester: u8,
    #[serde(default)]
    date: String,
    #[serde(default)]
    path: String,
}

/// A manifest row whose transcript path is empty (no transcript produced).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLesson {
    pub lesson_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ManifestLoad {
    pub corpus: Corpus,
    pub skipped: Vec<SkippedLesson>,
}

/// Reads a manifest and ingests every listed transcript in parallel.
/// Relative transcript paths resolve against the manifest's directory.
pub fn load_manifest(manifest: &Path) -> Result<ManifestLoad, CorpusError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let manifest_err = |source| CorpusError::Manifest {
        path: manifest.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest)
        .map_err(manifest_err)?;

    let mut pending = Vec::new();
    let mut skipped = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(manifest_err)?;
        let recorded_date = if row.date.is_empty() {
            None
        } else {
            Some(
                NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|_| CorpusError::BadDate {
                    path: manifest.to_path_buf(),
                    row: i + 2,
                    value: row.date.clone(),
                })?,
            )
        };
        let metadata = LessonMetadata {
            lesson_id: row.lesson_id,
            teacher_id: row.teacher_id,
            group_id: row.group_id,
            grade: row.grade,
            trimester: row.trimester,
            recorded_date,
        };
        metadata.validate()?;
        if row.path.is_empty() {
            skipped.push(SkippedLesson {
                lesson_id: metadata.lesson_id,
                reason: "no transcript path".into(),
            });
        } else {
            pending.push((base.join(&row.path), metadata));
        }
    }

    let lessons = pending
        .into_par_iter()
        .map(|(path, metadata)| ingest_file(&path, metadata))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ManifestLoad {
        corpus: Corpus::from_lessons(lessons)?,
        skipped,
    })
}
