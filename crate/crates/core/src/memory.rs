//! Experience notebook: an append-only store of key/value experiences with a
//! word-overlap retriever.
//!
//! Keys are short comma-separated cue-word lists written by the model when it
//! issues `NOTE[key]: value`. Retrieval scores an experience by the number of
//! distinct tokens its key shares with the query; zero-overlap experiences are
//! never returned.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("experience {0} is empty")]
    EmptyField(&'static str),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed experience record at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Whether the source training case was answered correctly before feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn from_verdict(correct: bool) -> Self {
        if correct {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// What the value of an experience holds: an abstracted rule, or the raw case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteMode {
    Abstract,
    Case,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experience {
    pub id: u64,
    pub key: String,
    pub value: String,
    pub polarity: Polarity,
    pub source_case_id: String,
    pub mode: NoteMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalResult<'a> {
    pub experience: &'a Experience,
    /// Number of distinct tokens shared by the query and the key. Always >= 1.
    pub score: usize,
}

/// Restricts which experiences are eligible for retrieval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecallFilter {
    pub polarity: Option<Polarity>,
    pub mode: Option<NoteMode>,
}

impl RecallFilter {
    pub fn admits(&self, e: &Experience) -> bool {
        self.polarity.is_none_or(|p| p == e.polarity) && self.mode.is_none_or(|m| m == e.mode)
    }
}

/// Anything the test-time harness can pull experiences from.
pub trait Retriever: Sync {
    fn retrieve(&self, query: &str, k: usize, filter: RecallFilter) -> Vec<RetrievalResult<'_>>;
}

/// Lowercase, split on every non-alphanumeric character, drop empty fragments,
/// collapse duplicates.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|frag| !frag.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryStore {
    experiences: Vec<Experience>,
    key_tokens: Vec<BTreeSet<String>>,
    next_id: u64,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn note(
        &mut self,
        key: &str,
        value: &str,
        polarity: Polarity,
        source_case_id: &str,
        mode: NoteMode,
    ) -> Result<&Experience, MemoryError> {
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(MemoryError::EmptyField("key"));
        }
        if value.is_empty() {
            return Err(MemoryError::EmptyField("value"));
        }
        let exp = Experience {
            id: self.next_id,
            key: key.to_string(),
            value: value.to_string(),
            polarity,
            source_case_id: source_case_id.to_string(),
            mode,
        };
        self.push(exp);
        Ok(self.experiences.last().expect("just pushed"))
    }

    fn push(&mut self, exp: Experience) {
        self.next_id = exp.id + 1;
        self.key_tokens.push(tokenize(&exp.key));
        self.experiences.push(exp);
    }

    pub fn store_count(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn experiences(&self) -> &[Experience] {
        &self.experiences
    }

    pub fn count_where(&self, filter: RecallFilter) -> usize {
        self.experiences.iter().filter(|e| filter.admits(e)).count()
    }

    pub fn get(&self, id: u64) -> Option<&Experience> {
        self.experiences
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.experiences[i])
    }

    /// Up to `k` experiences whose key overlaps the query, best score first,
    /// ties by ascending id.
    pub fn recall(
        &self,
        query: &str,
        k: usize,
        polarity: Option<Polarity>,
    ) -> Vec<RetrievalResult<'_>> {
        self.recall_where(
            query,
            k,
            RecallFilter {
                polarity,
                mode: None,
            },
        )
    }

    pub fn recall_where(
        &self,
        query: &str,
        k: usize,
        filter: RecallFilter,
    ) -> Vec<RetrievalResult<'_>> {
        if k == 0 {
            return Vec::new();
        }
        let query_tokens = tokenize(query);
        let mut hits: Vec<RetrievalResult<'_>> = self
            .experiences
            .iter()
            .zip(&self.key_tokens)
            .filter(|(e, _)| filter.admits(e))
            .filter_map(|(e, toks)| {
                let score = toks.intersection(&query_tokens).count();
                (score > 0).then_some(RetrievalResult {
                    experience: e,
                    score,
                })
            })
            .collect();
        // ids are ascending in storage order, so a stable sort on score keeps the tie rule
        hits.sort_by_key(|h| std::cmp::Reverse(h.score));
        hits.truncate(k);
        hits
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for exp in &self.experiences {
            write_record(&mut w, exp).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Appends one record to an existing store file (creating it if needed).
    pub fn append_record(path: &Path, exp: &Experience) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        write_record(&mut f, exp).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::open(path).map_err(io)?;
        let mut store = MemoryStore::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let exp: Experience = serde_json::from_str(&line).map_err(|e| MemoryError::Format {
                line: line_no,
                reason: e.to_string(),
            })?;
            let bad = |reason: &str| MemoryError::Format {
                line: line_no,
                reason: reason.to_string(),
            };
            if exp.key.trim().is_empty() {
                return Err(bad("empty key"));
            }
            if exp.value.trim().is_empty() {
                return Err(bad("empty value"));
            }
            if !store.is_empty() && exp.id < store.next_id {
                return Err(bad("ids must be strictly increasing"));
            }
            store.push(exp);
        }
        Ok(store)
    }
}

impl Retriever for MemoryStore {
    fn retrieve(&self, query: &str, k: usize, filter: RecallFilter) -> Vec<RetrievalResult<'_>> {
        self.recall_where(query, k, filter)
    }
}

fn write_record<W: Write>(w: &mut W, exp: &Experience) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, exp)?;
    w.write_all(b"\n")
}
