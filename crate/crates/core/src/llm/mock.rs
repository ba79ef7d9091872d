//! Scripted, deterministic model client for tests and offline runs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use parking_lot::Mutex;
use serde::Deserialize;

use super::prompts::PromptKind;
use super::{GenParams, LlmClient, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCall {
    pub kind: PromptKind,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Default)]
struct MockState {
    cursors: HashMap<PromptKind, usize>,
    calls: Vec<MockCall>,
}

/// Replays canned replies per prompt class, in order.
#[derive(Debug, Default)]
pub struct MockLlm {
    script: HashMap<PromptKind, Vec<String>>,
    state: Mutex<MockState>,
}

#[derive(Deserialize)]
struct ScriptLine {
    #[serde(rename = "match")]
    kind: PromptKind,
    reply: String,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(entries: impl IntoIterator<Item = (PromptKind, String)>) -> Self {
        let mut mock = Self::new();
        for (kind, reply) in entries {
            mock.push(kind, reply);
        }
        mock
    }

    /// Loads a JSONL script of `{"match": "<class>", "reply": "<raw text>"}` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| LlmError::Script(e.to_string()))?;
        let mut mock = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Script(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptLine = serde_json::from_str(&line)
                .map_err(|e| LlmError::Script(format!("line {}: {e}", idx + 1)))?;
            mock.push(entry.kind, entry.reply);
        }
        Ok(mock)
    }

    pub fn push(&mut self, kind: PromptKind, reply: impl Into<String>) -> &mut Self {
        self.script.entry(kind).or_default().push(reply.into());
        self
    }

    pub fn with(mut self, kind: PromptKind, reply: impl Into<String>) -> Self {
        self.push(kind, reply);
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().calls.clone()
    }

    pub fn calls_of(&self, kind: PromptKind) -> Vec<MockCall> {
        self.state
            .lock()
            .calls
            .iter()
            .filter(|c| c.kind == kind)
            .cloned()
            .collect()
    }

    pub fn remaining(&self, kind: PromptKind) -> usize {
        let total = self.script.get(&kind).map_or(0, Vec::len);
        total.saturating_sub(self.state.lock().cursors.get(&kind).copied().unwrap_or(0))
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, system: &str, user: &str, _params: &GenParams) -> Result<String, LlmError> {
        let kind = PromptKind::classify(system)
            .ok_or_else(|| LlmError::Script(format!("unrecognized prompt: {system}")))?;
        let mut state = self.state.lock();
        state.calls.push(MockCall {
            kind,
            system: system.to_owned(),
            user: user.to_owned(),
        });
        let cursor = state.cursors.entry(kind).or_insert(0);
        let reply = self
            .script
            .get(&kind)
            .and_then(|replies| replies.get(*cursor))
            .ok_or(LlmError::ScriptExhausted(kind))?;
        *cursor += 1;
        Ok(reply.clone())
    }
}
