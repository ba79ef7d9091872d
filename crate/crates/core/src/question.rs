//! Questions and answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    MultipleChoice,
    TrueFalse,
    Generation,
}

impl DatasetKind {
    pub fn has_options(self) -> bool {
        !matches!(self, DatasetKind::Generation)
    }
}

/// An answer: either an option index or free text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Option(usize),
    Text(String),
}

impl Answer {
    pub fn empty() -> Self {
        Answer::Text(String::new())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QuestionError {
    #[error("question text is empty")]
    EmptyText,
    #[error("{0:?} question requires options")]
    MissingOptions(DatasetKind),
    #[error("gold answer index {index} out of range for {len} options")]
    GoldOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<Answer>,
    pub kind: DatasetKind,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        options: Option<Vec<String>>,
        gold_answer: Option<Answer>,
        kind: DatasetKind,
    ) -> Result<Self, QuestionError> {
        let q = Self {
            id: id.into(),
            text: text.into(),
            options,
            gold_answer,
            kind,
        };
        q.validate()?;
        Ok(q)
    }

    /// Free-text question without options.
    pub fn open(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            options: None,
            gold_answer: None,
            kind: DatasetKind::Generation,
        }
    }

    pub fn validate(&self) -> Result<(), QuestionError> {
        if self.text.trim().is_empty() {
            return Err(QuestionError::EmptyText);
        }
        if self.kind.has_options() && self.options.as_ref().is_none_or(|o| o.is_empty()) {
            return Err(QuestionError::MissingOptions(self.kind));
        }
        if let (Some(Answer::Option(index)), Some(opts)) = (&self.gold_answer, &self.options) {
            if *index >= opts.len() {
                return Err(QuestionError::GoldOutOfRange { index: *index, len: opts.len() });
            }
        }
        if let (Some(Answer::Option(index)), None) = (&self.gold_answer, &self.options) {
            return Err(QuestionError::GoldOutOfRange { index: *index, len: 0 });
        }
        Ok(())
    }

    /// Maps a model answer onto an option index: direct index, exact option
    /// text (normalized), or a leading integer.
    pub fn option_index(&self, answer: &Answer) -> Option<usize> {
        let opts = self.options.as_ref()?;
        match answer {
            Answer::Option(i) => (*i < opts.len()).then_some(*i),
            Answer::Text(text) => {
                let wanted = normalize(text);
                if let Some(i) = opts.iter().position(|o| normalize(o) == wanted) {
                    return Some(i);
                }
                leading_integer(text).filter(|i| *i < opts.len())
            }
        }
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.gold_answer.as_ref().and_then(|g| self.option_index(g))
    }

    /// Renders an answer as text, resolving option indices to option text.
    pub fn answer_text(&self, answer: &Answer) -> String {
        match answer {
            Answer::Text(t) => t.clone(),
            Answer::Option(i) => self
                .options
                .as_ref()
                .and_then(|o| o.get(*i))
                .cloned()
                .unwrap_or_else(|| i.to_string()),
        }
    }
}

fn leading_integer(text: &str) -> Option<usize> {
    let trimmed = text.trim_start().trim_start_matches(['(', '[']);
    let digits: String = trimmed.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}
