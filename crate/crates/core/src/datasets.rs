//! Task files and the LETS letter-splicing generator.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VOCAB_SIZE: usize = 100;
pub const MIN_WORD_LEN: usize = 4;
pub const MAX_WORD_LEN: usize = 10;
pub const WORDS_PER_QUERY: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("index {index} out of range for word {word:?}")]
    IndexOutOfRange { word: String, index: usize },
    #[error("words and indexes differ in length ({words} vs {indexes})")]
    LengthMismatch { words: usize, indexes: usize },
    #[error("malformed task record at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("train ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One (question, answer) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self, DatasetError> {
        let bad = |s: String| Err(DatasetError::InvalidVocabulary(s));
        if words.len() != VOCAB_SIZE {
            return bad(format!("expected {VOCAB_SIZE} words, got {}", words.len()));
        }
        let mut seen = HashSet::new();
        for w in &words {
            if !w.chars().all(|c| c.is_ascii_lowercase()) {
                return bad(format!("{w:?} is not lowercase alphabetic"));
            }
            if !(MIN_WORD_LEN..=MAX_WORD_LEN).contains(&w.len()) {
                return bad(format!("{w:?} has length {} outside 4-10", w.len()));
            }
            if !seen.insert(w.as_str()) {
                return bad(format!("duplicate word {w:?}"));
            }
        }
        Ok(Self { words })
    }

    /// Parses one word per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    /// The fixed wordlist shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lets_vocab.txt")).expect("bundled vocabulary is valid")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetsInstance {
    pub id: String,
    pub words: Vec<String>,
    /// 1-based letter positions, one per word.
    pub indexes: Vec<usize>,
    pub question: String,
    pub answer: String,
}

impl LetsInstance {
    pub fn from_parts(
        id: impl Into<String>,
        words: Vec<String>,
        indexes: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        let answer = lets_oracle(&words, &indexes)?;
        let question = lets_question(&words, &indexes);
        Ok(Self {
            id: id.into(),
            words,
            indexes,
            question,
            answer,
        })
    }

    pub fn to_task(&self) -> TaskInstance {
        TaskInstance {
            id: self.id.clone(),
            question: self.question.clone(),
            answer: self.answer.clone(),
        }
    }
}

pub fn ordinal_suffix(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Concatenates the 1-based `indexes[i]`-th letter of each `words[i]`.
pub fn lets_oracle<S: AsRef<str>>(words: &[S], indexes: &[usize]) -> Result<String, DatasetError> {
    if words.len() != indexes.len() {
        return Err(DatasetError::LengthMismatch {
            words: words.len(),
            indexes: indexes.len(),
        });
    }
    words
        .iter()
        .zip(indexes)
        .map(|(w, &i)| {
            let w = w.as_ref();
            i.checked_sub(1)
                .and_then(|i0| w.chars().nth(i0))
                .ok_or_else(|| DatasetError::IndexOutOfRange {
                    word: w.to_string(),
                    index: i,
                })
        })
        .collect()
}

fn lets_question(words: &[String], indexes: &[usize]) -> String {
    let parts: Vec<String> = words
        .iter()
        .zip(indexes)
        .map(|(w, &i)| format!("the {} letter of \"{w}\"", ordinal_suffix(i)))
        .collect();
    let body = match parts.as_slice() {
        [] => String::new(),
        [only] => only.clone(),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    };
    format!("Splice {body} together.")
}

/// Draws `count` instances: three distinct words per instance, each with a
/// uniformly chosen letter position. Deterministic in `(seed, vocab)`.
pub fn gen_lets(
    count: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Vec<LetsInstance>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.to_string().len().max(4);
    (0..count)
        .map(|n| {
            let picks = index::sample(&mut rng, vocab.words.len(), WORDS_PER_QUERY);
            let words: Vec<String> = picks.iter().map(|i| vocab.words[i].clone()).collect();
            let indexes: Vec<usize> = words.iter().map(|w| rng.gen_range(1..=w.len())).collect();
            LetsInstance::from_parts(format!("lets-{n:0width$}"), words, indexes)
        })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads `{id, question, answer}` records; extra fields are ignored.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Format {
            line: line_no,
            reason,
        };
        let t: TaskInstance = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if t.question.trim().is_empty() || t.answer.trim().is_empty() {
            return Err(bad("question and answer must be non-empty".into()));
        }
        if !ids.insert(t.id.clone()) {
            return Err(bad(format!("duplicate id {:?}", t.id)));
        }
        out.push(t);
    }
    Ok(out)
}

/// Seeded shuffle, then the first `round(n * train_ratio)` go to train.
pub fn split(
    instances: &[TaskInstance],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>), DatasetError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(train_ratio));
    }
    let mut shuffled = instances.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (instances.len() as f64 * train_ratio).round() as usize;
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}
