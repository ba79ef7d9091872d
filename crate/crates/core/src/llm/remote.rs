//! OpenAI-compatible chat-completions client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GenParams, LlmClient, LlmError};

pub const ENV_API_KEY: &str = "WTS_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "WTS_LLM_BASE_URL";
pub const ENV_MODEL: &str = "WTS_LLM_MODEL";
pub const ENV_EMBED_MODEL: &str = "WTS_EMBED_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteLlm {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    transport_retries: u32,
    backoff: Duration,
}

impl RemoteLlm {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_owned(),
            api_key,
            transport_retries: 3,
            backoff: Duration::from_millis(500),
        })
    }

    /// Reads `WTS_LLM_BASE_URL`, `WTS_LLM_MODEL` and `WTS_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_owned());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_owned());
        Self::new(&base, &model, std::env::var(ENV_API_KEY).ok())
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, (LlmError, bool)> {
        let mut req = self.http.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (LlmError::Transport(e.to_string()), true))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            let text = resp.text().unwrap_or_default();
            return Err((LlmError::Upstream { status: status.as_u16(), body: text }, transient));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| (LlmError::Transport(format!("bad response body: {e}")), false))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (LlmError::Transport("response has no content".into()), false))
    }
}

impl LlmClient for RemoteLlm {
    fn complete(&self, system: &str, user: &str, params: &GenParams) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage { role: "system", content: system },
                ChatMessage { role: "user", content: user },
            ],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((err, true)) if attempt < self.transport_retries => {
                    tracing::warn!(attempt, %err, "chat completion failed, retrying");
                    thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }
}
