//! The action grammar spoken between the model and the harness.
//!
//! A reply carries one command at the start of a line:
//!
//! ```text
//! THINK[thought]
//! NOTE[cue, words]: experience text
//! RECALL[query]
//! ANSWER[prediction]
//! ```
//!
//! Keywords are case-insensitive. Bracket contents may nest `[` `]` as long as
//! they balance; the bracket that closes the outermost `[` ends the argument.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::Experience;

/// Substituted into the test prompt when retrieval yields nothing (or is disabled).
pub const NO_EXPERIENCE: &str = "No relevant experience";

pub const FORMAT_REMINDER: &str = "Your reply did not contain a command. Reply with exactly one \
command at the start of a line: THINK[...], NOTE[...]: ..., or ANSWER[...].";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("no command found in reply: {0:?}")]
    UnparsableAction(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    Think { thought: String },
    Note { key: String, value: String },
    Recall { query: String },
    Answer { answer: String },
}

impl Command {
    pub fn think(s: impl Into<String>) -> Self {
        Command::Think { thought: s.into() }
    }

    pub fn note(key: impl Into<String>, value: impl Into<String>) -> Self {
        Command::Note {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn recall(s: impl Into<String>) -> Self {
        Command::Recall { query: s.into() }
    }

    pub fn answer(s: impl Into<String>) -> Self {
        Command::Answer { answer: s.into() }
    }

    /// Renders the command in the wire grammar accepted by [`parse_action`].
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Think { thought } => write!(f, "THINK[{thought}]"),
            Command::Note { key, value } => write!(f, "NOTE[{key}]: {value}"),
            Command::Recall { query } => write!(f, "RECALL[{query}]"),
            Command::Answer { answer } => write!(f, "ANSWER[{answer}]"),
        }
    }
}

#[derive(Clone, Copy)]
enum Keyword {
    Think,
    Note,
    Recall,
    Answer,
}

const KEYWORDS: [(&str, Keyword); 4] = [
    ("THINK", Keyword::Think),
    ("NOTE", Keyword::Note),
    ("RECALL", Keyword::Recall),
    ("ANSWER", Keyword::Answer),
];

/// Parses the first command found at the start of any line of `raw`.
pub fn parse_action(raw: &str) -> Result<Command, ProtocolError> {
    raw.lines()
        .find_map(parse_line)
        .ok_or_else(|| ProtocolError::UnparsableAction(raw.to_string()))
}

fn parse_line(line: &str) -> Option<Command> {
    let line = line.trim();
    let (kw, rest) = KEYWORDS.iter().find_map(|(name, kw)| {
        let head = line.get(..name.len())?;
        head.eq_ignore_ascii_case(name)
            .then(|| (*kw, &line[name.len()..]))
    })?;
    let rest = rest.trim_start().strip_prefix('[')?;
    let (arg, tail) = split_bracket(rest)?;
    let arg = arg.trim();
    match kw {
        Keyword::Think => Some(Command::think(arg)),
        Keyword::Recall => Some(Command::recall(arg)),
        Keyword::Answer => Some(Command::answer(arg)),
        Keyword::Note => {
            let value = tail.trim_start().strip_prefix(':')?.trim();
            (!arg.is_empty() && !value.is_empty()).then(|| Command::note(arg, value))
        }
    }
}

/// Splits `s` (just past an opening `[`) at its matching `]`.
fn split_bracket(s: &str) -> Option<(&str, &str)> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' if depth == 0 => return Some((&s[..i], &s[i + 1..])),
            ']' => depth -= 1,
            _ => {}
        }
    }
    None
}

/// Lowercases, trims and collapses internal whitespace runs to single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn judge(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Ground-truth feedback shown after the first answer of a training case.
/// Carries the verdict and the gold label only.
pub fn feedback(_prediction: &str, gold: &str, correct: bool) -> String {
    if correct {
        format!("Your answer is correct. The answer is {gold}.")
    } else {
        format!("Your answer is wrong. The correct answer is {gold}.")
    }
}

/// Prompt templates plus the worked demonstrations they embed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    train_template: String,
    test_template: String,
    feedback_template: String,
    demonstrations: Vec<String>,
}

const SLOT_DEMOS: &str = "{demonstrations}";
const SLOT_QUESTION: &str = "{question}";
const SLOT_EXPERIENCES: &str = "{experiences}";
const SLOT_FEEDBACK: &str = "{feedback}";
const SLOTS: [&str; 4] = [SLOT_DEMOS, SLOT_QUESTION, SLOT_EXPERIENCES, SLOT_FEEDBACK];

impl PromptBundle {
    pub fn new(
        train_template: impl Into<String>,
        test_template: impl Into<String>,
        feedback_template: impl Into<String>,
        demonstrations: Vec<String>,
    ) -> Result<Self, ProtocolError> {
        let bundle = Self {
            train_template: train_template.into(),
            test_template: test_template.into(),
            feedback_template: feedback_template.into(),
            demonstrations,
        };
        check_slots(
            "train",
            &bundle.train_template,
            &[SLOT_DEMOS, SLOT_QUESTION],
        )?;
        check_slots(
            "test",
            &bundle.test_template,
            &[SLOT_DEMOS, SLOT_QUESTION, SLOT_EXPERIENCES],
        )?;
        check_slots("feedback", &bundle.feedback_template, &[SLOT_FEEDBACK])?;
        if !(2..=3).contains(&bundle.demonstrations.len()) {
            return Err(ProtocolError::Template(format!(
                "expected 2-3 demonstrations, found {}",
                bundle.demonstrations.len()
            )));
        }
        Ok(bundle)
    }

    /// Parses the sectioned bundle format:
    ///
    /// ```text
    /// ### train
    /// ...{demonstrations}...{question}...
    /// ### test
    /// ...{demonstrations}...{question}...{experiences}...
    /// ### feedback
    /// {feedback} ...
    /// ### demonstration
    /// ...
    /// ```
    ///
    /// `demonstration` may repeat. Surrounding blank lines of each section are trimmed.
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            if let Some(name) = line.strip_prefix("### ") {
                sections.push((name.trim().to_lowercase(), String::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push_str(line);
                body.push('\n');
            } else if !line.trim().is_empty() {
                return Err(ProtocolError::Template(
                    "text before the first section header".into(),
                ));
            }
        }
        let mut train = None;
        let mut test = None;
        let mut fb = None;
        let mut demos = Vec::new();
        for (name, body) in sections {
            let body = body.trim_matches('\n').to_string();
            let slot = match name.as_str() {
                "train" => &mut train,
                "test" => &mut test,
                "feedback" => &mut fb,
                "demonstration" => {
                    demos.push(body);
                    continue;
                }
                other => {
                    return Err(ProtocolError::Template(format!(
                        "unknown section {other:?}"
                    )))
                }
            };
            if slot.replace(body).is_some() {
                return Err(ProtocolError::Template(format!(
                    "duplicate section {name:?}"
                )));
            }
        }
        let missing = |s: &str| ProtocolError::Template(format!("missing section {s:?}"));
        Self::new(
            train.ok_or_else(|| missing("train"))?,
            test.ok_or_else(|| missing("test"))?,
            fb.ok_or_else(|| missing("feedback"))?,
            demos,
        )
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProtocolError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// One of the bundles shipped with the crate: `lets` or `generic`.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "lets" => include_str!("../prompts/lets.txt"),
            "generic" => include_str!("../prompts/generic.txt"),
            _ => return None,
        };
        Some(Self::parse(text).expect("bundled prompt files are valid"))
    }

    pub fn demonstrations(&self) -> &[String] {
        &self.demonstrations
    }

    fn demos_text(&self) -> String {
        self.demonstrations.join("\n\n")
    }

    pub fn render_train_prompt(&self, question: &str) -> Result<String, ProtocolError> {
        non_empty_question(question)?;
        let demos = self.demos_text();
        render(
            &self.train_template,
            &[(SLOT_DEMOS, demos.as_str()), (SLOT_QUESTION, question)],
        )
    }

    pub fn render_test_prompt(
        &self,
        question: &str,
        experiences: &[&Experience],
    ) -> Result<String, ProtocolError> {
        non_empty_question(question)?;
        let demos = self.demos_text();
        let recalled = if experiences.is_empty() {
            NO_EXPERIENCE.to_string()
        } else {
            experiences
                .iter()
                .map(|e| format!("- {}", e.value))
                .collect::<Vec<_>>()
                .join("\n")
        };
        render(
            &self.test_template,
            &[
                (SLOT_DEMOS, demos.as_str()),
                (SLOT_QUESTION, question),
                (SLOT_EXPERIENCES, recalled.as_str()),
            ],
        )
    }

    pub fn render_feedback(&self, feedback_text: &str) -> Result<String, ProtocolError> {
        render(&self.feedback_template, &[(SLOT_FEEDBACK, feedback_text)])
    }
}

fn non_empty_question(q: &str) -> Result<(), ProtocolError> {
    if q.trim().is_empty() {
        Err(ProtocolError::Template("question is empty".into()))
    } else {
        Ok(())
    }
}

fn check_slots(which: &str, template: &str, required: &[&str]) -> Result<(), ProtocolError> {
    for slot in SLOTS {
        let n = template.matches(slot).count();
        let want = usize::from(required.contains(&slot));
        if n != want {
            return Err(ProtocolError::Template(format!(
                "{which} template must contain {slot} {want} time(s), found {n}"
            )));
        }
    }
    Ok(())
}

/// Single-pass substitution: text inserted into a slot is never rescanned.
fn render(template: &str, fills: &[(&str, &str)]) -> Result<String, ProtocolError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    let mut used = vec![false; fills.len()];
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match fills.iter().position(|(slot, _)| tail.starts_with(slot)) {
            Some(i) => {
                out.push_str(fills[i].1);
                used[i] = true;
                rest = &tail[fills[i].0.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(ProtocolError::Template(format!(
            "slot {} missing",
            fills[i].0
        )));
    }
    Ok(out)
}
