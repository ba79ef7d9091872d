//! Language-model interactions.
//!
//! [`LlmClient`] is the raw text-in/text-out contract; [`Gateway`] renders the
//! prompt templates, parses structured replies and retries malformed ones.

pub mod mock;
pub mod parse;
pub mod prompts;
pub mod remote;

use std::cmp::Ordering;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::question::{Answer, Question};
use crate::store::{normalize, Triple};

pub use mock::{MockCall, MockLlm};
pub use parse::{parse_json_reply, Schema};
pub use prompts::{Prompt, PromptKind, PromptSet};
pub use remote::RemoteLlm;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("malformed model reply ({reason})")]
    MalformedReply { reason: String, raw: String },
    #[error("mock script exhausted for {0:?} prompts")]
    ScriptExhausted(PromptKind),
    #[error("mock script error: {0}")]
    Script(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream returned {status}: {body}")]
    Upstream { status: u16, body: String },
}

impl LlmError {
    pub fn is_malformed(&self) -> bool {
        matches!(self, LlmError::MalformedReply { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after a malformed reply.
    pub retries: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            retries: DEFAULT_RETRIES,
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, system: &str, user: &str, params: &GenParams) -> Result<String, LlmError>;
}

impl<L: LlmClient + ?Sized> LlmClient for &L {
    fn complete(&self, system: &str, user: &str, params: &GenParams) -> Result<String, LlmError> {
        (**self).complete(system, user, params)
    }
}

impl<L: LlmClient + ?Sized> LlmClient for Box<L> {
    fn complete(&self, system: &str, user: &str, params: &GenParams) -> Result<String, LlmError> {
        (**self).complete(system, user, params)
    }
}

impl<L: LlmClient + ?Sized> LlmClient for std::sync::Arc<L> {
    fn complete(&self, system: &str, user: &str, params: &GenParams) -> Result<String, LlmError> {
        (**self).complete(system, user, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Positive,
    Negative,
}

impl Confidence {
    fn parse(value: &Value) -> Option<Self> {
        match value {
            Value::Bool(true) => Some(Confidence::Positive),
            Value::Bool(false) => Some(Confidence::Negative),
            Value::String(s) => match s.trim().to_lowercase().as_str() {
                "yes" | "y" | "positive" | "true" => Some(Confidence::Positive),
                "no" | "n" | "negative" | "false" => Some(Confidence::Negative),
                _ => None,
            },
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonedAnswer {
    pub confidence: Confidence,
    pub answer: Answer,
    pub support_info: String,
}

impl ReasonedAnswer {
    /// Stand-in used when the reasoner never produced a parseable reply.
    pub fn unparsed() -> Self {
        Self {
            confidence: Confidence::Negative,
            answer: Answer::empty(),
            support_info: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub relevance: f64,
}

/// Orders by relevance descending, then triple text ascending.
pub fn relevance_order(a: &ScoredTriple, b: &ScoredTriple) -> Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then_with(|| a.triple.text().cmp(&b.triple.text()))
}

fn answer_from_value(value: &Value) -> Answer {
    match value {
        Value::Number(n) => match n.as_u64() {
            Some(i) => Answer::Option(i as usize),
            None => match n.as_f64() {
                Some(f) if f >= 0.0 && f.fract() == 0.0 => Answer::Option(f as usize),
                _ => Answer::Text(n.to_string()),
            },
        },
        Value::String(s) => Answer::Text(s.clone()),
        Value::Null => Answer::empty(),
        other => Answer::Text(other.to_string()),
    }
}

fn text_of(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn triple_from_value(value: &Value) -> Option<Triple> {
    let obj = value.as_object()?;
    let field = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| obj.get(*n))
            .and_then(Value::as_str)
    };
    Triple::new(
        field(&["head", "subject"])?,
        field(&["relation", "predicate"])?,
        field(&["tail", "object"])?,
    )
    .ok()
}

fn score_from_value(value: &Value) -> Option<f64> {
    let score = match value {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    score.is_finite().then(|| score.clamp(0.0, 1.0))
}

/// Structured access to a model through the prompt templates.
#[derive(Clone, Copy)]
pub struct Gateway<'a> {
    llm: &'a dyn LlmClient,
    prompts: &'a PromptSet,
    params: &'a GenParams,
}

impl<'a> Gateway<'a> {
    pub fn new(llm: &'a dyn LlmClient, prompts: &'a PromptSet, params: &'a GenParams) -> Self {
        Self { llm, prompts, params }
    }

    pub fn params(&self) -> &GenParams {
        self.params
    }

    /// Sends a prompt, re-asking up to `retries` times while the reply fails
    /// to parse. Transport and script errors are returned immediately.
    fn ask<T>(
        &self,
        prompt: &Prompt,
        schema: Schema,
        mut interpret: impl FnMut(Map<String, Value>) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let mut last = None;
        for attempt in 0..=self.params.retries {
            let raw = self.llm.complete(&prompt.system, &prompt.user, self.params)?;
            let parsed = parse_json_reply(&raw, schema).and_then(|map| {
                interpret(map).map_err(|reason| LlmError::MalformedReply {
                    reason,
                    raw: raw.clone(),
                })
            });
            match parsed {
                Ok(value) => return Ok(value),
                Err(err) => {
                    tracing::debug!(attempt, ?schema, %err, "malformed reply");
                    last = Some(err);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn extract_entities(
        &self,
        question: &Question,
        max_entities: usize,
    ) -> Result<Vec<String>, LlmError> {
        let prompt = self.prompts.entity(&question.text, max_entities);
        self.ask(&prompt, Schema::Entities, |map| {
            let list = map["entities"].as_array().ok_or("`entities` is not a list")?;
            let mut seen = IndexSet::new();
            for item in list {
                let text = match item {
                    Value::String(s) => normalize(s),
                    Value::Number(n) => n.to_string(),
                    _ => continue,
                };
                if !text.is_empty() {
                    seen.insert(text);
                }
            }
            Ok(seen.into_iter().take(max_entities).collect())
        })
    }

    /// One relevance score per input triple, sorted by [`relevance_order`].
    /// Triples the model leaves out score 0.
    pub fn score_triples(
        &self,
        question: &Question,
        triples: &[Triple],
    ) -> Result<Vec<ScoredTriple>, LlmError> {
        let prompt = self.prompts.score(&question.text, triples);
        self.ask(&prompt, Schema::ScoredTriples, |map| {
            let list = map["triples"].as_array().ok_or("`triples` is not a list")?;
            let mut replied: Vec<(Triple, f64)> = Vec::new();
            for item in list {
                let Some(obj) = item.as_object() else { continue };
                let triple = obj
                    .get("triple")
                    .and_then(triple_from_value)
                    .or_else(|| triple_from_value(item));
                let score = obj.get("score").and_then(score_from_value);
                if let (Some(t), Some(s)) = (triple, score) {
                    if !replied.iter().any(|(seen, _)| seen == &t) {
                        replied.push((t, s));
                    }
                }
            }
            let mut scored: Vec<ScoredTriple> = triples
                .iter()
                .map(|t| ScoredTriple {
                    triple: t.clone(),
                    relevance: replied
                        .iter()
                        .find(|(r, _)| r == t)
                        .map_or(0.0, |(_, s)| *s),
                })
                .collect();
            scored.sort_by(relevance_order);
            Ok(scored)
        })
    }

    pub fn reason(&self, question: &Question, triples: &[Triple]) -> Result<ReasonedAnswer, LlmError> {
        let prompt = self.prompts.reason(question, triples);
        self.ask(&prompt, Schema::Reasoned, |map| {
            let confidence = Confidence::parse(&map["confidence"])
                .ok_or_else(|| format!("unrecognized confidence {}", map["confidence"]))?;
            Ok(ReasonedAnswer {
                confidence,
                answer: answer_from_value(&map["answer"]),
                support_info: text_of(&map["support_info"]),
            })
        })
    }

    /// Candidate triples from a question, an answer (possibly empty) and the
    /// entities of the context triples. A reply that never parses yields no
    /// triples; malformed members are dropped one by one.
    pub fn generate_triples(
        &self,
        question: &Question,
        answer: &str,
        context: &[Triple],
    ) -> Result<Vec<Triple>, LlmError> {
        let mut entities: IndexSet<String> = IndexSet::new();
        for t in context {
            entities.insert(t.head().to_owned());
            entities.insert(t.tail().to_owned());
        }
        let entities: Vec<String> = entities.into_iter().collect();
        let prompt = self.prompts.generate(&question.text, answer, &entities);
        let result = self.ask(&prompt, Schema::Triples, |map| {
            let list = map["triples"].as_array().ok_or("`triples` is not a list")?;
            let mut out: IndexSet<Triple> = IndexSet::new();
            for item in list {
                match triple_from_value(item) {
                    Some(t) => {
                        out.insert(t);
                    }
                    None => tracing::debug!(%item, "dropping malformed generated triple"),
                }
            }
            Ok(out.into_iter().collect())
        });
        match result {
            Err(err) if err.is_malformed() => {
                tracing::warn!(%err, "triple generation reply unusable");
                Ok(Vec::new())
            }
            other => other,
        }
    }

    /// Retrieval-free baseline answer.
    pub fn direct_answer(&self, question: &Question) -> Result<Answer, LlmError> {
        let prompt = self.prompts.direct(question);
        self.ask(&prompt, Schema::Direct, |map| Ok(answer_from_value(&map["answer"])))
    }
}
