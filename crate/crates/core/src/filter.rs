//! Sentence segmentation and the keyword pre-filter.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceRef;
use crate::text;

/// Keyword list shipped with the tool.
pub const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords.txt");

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("candidate row {row}: {message}")]
    BadRow { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub reference: SentenceRef,
}

const TERMINALS: [char; 4] = ['.', '!', '?', '…'];
const CLOSERS: [char; 8] = ['"', '\'', '”', '’', '»', ')', ']', '}'];

/// Splits a transcript line into sentences.
///
/// A sentence ends at a run of terminal punctuation (`.`, `!`, `?`, `…`,
/// so `...` and `?!` are single terminals) plus any closing quotes or
/// brackets that follow it. A period between two digits is not a terminal.
/// Whitespace-only fragments are dropped; sentence text is trimmed.
pub fn segment(line: &str, lesson_id: &str, line_index: usize) -> Vec<Sentence> {
    let chars: Vec<char> = line.chars().collect();
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let decimal_point =
            c == '.' && i > 0 && chars[i - 1].is_ascii_digit() && chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if TERMINALS.contains(&c) && !decimal_point {
            while i < chars.len() && TERMINALS.contains(&chars[i]) {
                current.push(chars[i]);
                i += 1;
            }
            while i < chars.len() && CLOSERS.contains(&chars[i]) {
                current.push(chars[i]);
                i += 1;
            }
            pieces.push(std::mem::take(&mut current));
        } else {
            current.push(c);
            i += 1;
        }
    }
    pieces.push(current);

    pieces
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(sentence_index, p)| Sentence {
            text: p.to_owned(),
            reference: SentenceRef::new(lesson_id, line_index, sentence_index),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    /// Term words must appear as whole, contiguous words of the folded text.
    #[default]
    WholeWord,
    Substring,
}

#[derive(Debug, Clone)]
struct FoldedTerm {
    term: String,
    folded: String,
    words: Vec<String>,
}

/// Ordered, fold-deduplicated keyword terms.
#[derive(Debug, Clone, Default)]
pub struct KeywordList {
    terms: Vec<FoldedTerm>,
    pub match_policy: MatchPolicy,
}

impl KeywordList {
    /// Keeps the first spelling of every term that folds to the same string.
    pub fn new<I, S>(terms: I, match_policy: MatchPolicy) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let terms = terms
            .into_iter()
            .filter_map(|t| {
                let term = t.as_ref().trim();
                let folded = text::fold(term);
                if term.is_empty() || !seen.insert(folded.clone()) {
                    return None;
                }
                let words = text::words(&folded).map(str::to_owned).collect();
                Some(FoldedTerm {
                    term: term.to_owned(),
                    folded,
                    words,
                })
            })
            .collect();
        Self { terms, match_policy }
    }

    /// Parses a keyword file: one term per line, `#` starts a comment line.
    pub fn parse(source: &str, match_policy: MatchPolicy) -> Self {
        let terms = source
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(terms, match_policy)
    }

    pub fn default_list() -> Self {
        Self::parse(DEFAULT_KEYWORDS, MatchPolicy::default())
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.term.as_str())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Every term that matches `text`, in list order.
    pub fn matches(&self, text: &str) -> Vec<String> {
        let folded = text::fold(text);
        match self.match_policy {
            MatchPolicy::Substring => self
                .terms
                .iter()
                .filter(|t| folded.contains(&t.folded))
                .map(|t| t.term.clone())
                .collect(),
            MatchPolicy::WholeWord => {
                let words: Vec<&str> = text::words(&folded).collect();
                self.terms
                    .iter()
                    .filter(|t| {
                        !t.words.is_empty()
                            && words
                                .windows(t.words.len())
                                .any(|w| w.iter().zip(&t.words).all(|(a, b)| a == b))
                    })
                    .map(|t| t.term.clone())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSentence {
    pub sentence: Sentence,
    pub matched_terms: Vec<String>,
}

/// Keeps the sentences matching at least one keyword, in input order.
pub fn keyword_filter(sentences: &[Sentence], keywords: &KeywordList) -> Vec<CandidateSentence> {
    if keywords.is_empty() {
        return Vec::new();
    }
    sentences
        .par_iter()
        .filter_map(|s| {
            let matched_terms = keywords.matches(&s.text);
            (!matched_terms.is_empty()).then(|| CandidateSentence {
                sentence: s.clone(),
                matched_terms,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRow {
    lesson_id: String,
    line_index: usize,
    sentence_index: usize,
    matched_terms: String,
    text: String,
}

/// Writes candidates as CSV `lesson_id,line_index,sentence_index,matched_terms,text`.
pub fn write_candidates<W: Write>(out: W, candidates: &[CandidateSentence]) -> Result<(), FilterError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(["lesson_id", "line_index", "sentence_index", "matched_terms", "text"])?;
    for c in candidates {
        let r = &c.sentence.reference;
        writer.serialize(CandidateRow {
            lesson_id: r.lesson_id.clone(),
            line_index: r.line_index,
            sentence_index: r.sentence_index,
            matched_terms: c.matched_terms.join(";"),
            text: c.sentence.text.clone(),
        })?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_candidates<R: Read>(input: R) -> Result<Vec<CandidateSentence>, FilterError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CandidateRow>().enumerate() {
        let row = row?;
        let matched_terms: Vec<String> = row
            .matched_terms
            .split(';')
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        if matched_terms.is_empty() {
            return Err(FilterError::BadRow {
                row: i + 2,
                message: "no matched terms".into(),
            });
        }
        out.push(CandidateSentence {
            sentence: Sentence {
                text: row.text,
                reference: SentenceRef::new(row.lesson_id, row.line_index, row.sentence_index),
            },
            matched_terms,
        });
    }
    Ok(out)
}
