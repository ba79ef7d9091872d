//! Wiring from an [`AppConfig`] to live clients and a store.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use wts_core::llm::remote::{DEFAULT_BASE_URL, ENV_API_KEY, ENV_BASE_URL, ENV_EMBED_MODEL};
use wts_core::{
    AuditLog, CachedEmbedder, DkgStore, EmbedError, Embedder, Engine, HashEmbedder, LlmClient,
    LlmError, MockLlm, PromptSet, RemoteEmbedder, RemoteLlm, SharedStore, StoreError, Triple,
};

use crate::config::{AppConfig, EmbedderKind, LlmKind};

const DEFAULT_EMBED_MODEL: &str = "text-embedding-3-small";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("audit log: {0}")]
    Audit(std::io::Error),
    #[error("{path}:{line}: {reason}")]
    Ingest { path: String, line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to answer questions: config, clients and the store.
pub struct Runtime {
    pub config: AppConfig,
    pub prompts: PromptSet,
    pub embedder: Box<dyn Embedder>,
    pub llm: Box<dyn LlmClient>,
    pub store: SharedStore,
    pub audit: Option<AuditLog>,
}

impl Runtime {
    /// Builds clients from the config and loads the store if its file exists.
    pub fn from_config(config: AppConfig) -> Result<Self, RuntimeError> {
        let env = |k: &str| std::env::var(k).ok();
        let embedder: Box<dyn Embedder> = match config.embedder {
            EmbedderKind::Hash => Box::new(CachedEmbedder::new(HashEmbedder::new(config.embed_seed))),
            EmbedderKind::Remote => {
                let base = env(ENV_BASE_URL).unwrap_or_else(|| DEFAULT_BASE_URL.to_owned());
                let model = env(ENV_EMBED_MODEL).unwrap_or_else(|| DEFAULT_EMBED_MODEL.to_owned());
                Box::new(CachedEmbedder::new(RemoteEmbedder::new(&base, &model, env(ENV_API_KEY))?))
            }
        };
        let llm: Box<dyn LlmClient> = match config.llm {
            LlmKind::Mock => {
                let script = config.mock_script.as_ref().expect("validated config");
                Box::new(MockLlm::load(script)?)
            }
            LlmKind::Remote => Box::new(RemoteLlm::from_env()?),
        };
        Self::with_clients(config, embedder, llm)
    }

    /// Like [`Runtime::from_config`] with caller-supplied clients.
    pub fn with_clients(
        config: AppConfig,
        embedder: Box<dyn Embedder>,
        llm: Box<dyn LlmClient>,
    ) -> Result<Self, RuntimeError> {
        let store = if config.store_path.exists() {
            DkgStore::load(&config.store_path)?
        } else {
            DkgStore::new()
        };
        let audit = match &config.audit_log {
            Some(path) => Some(AuditLog::open(path).map_err(RuntimeError::Audit)?),
            None => None,
        };
        Ok(Self {
            prompts: PromptSet::new(config.domain.clone()),
            config,
            embedder,
            llm,
            store: SharedStore::new(store),
            audit,
        })
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(&self.config.pipeline, &self.prompts, self.embedder.as_ref(), self.llm.as_ref())
    }

    /// Writes the current store snapshot to the configured path.
    pub fn persist(&self) -> Result<(), RuntimeError> {
        if let Some(dir) = self.config.store_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.store.snapshot().save(&self.config.store_path)?;
        Ok(())
    }
}

pub type SharedRuntime = Arc<Runtime>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub added: usize,
    pub duplicates: usize,
    pub triple_count: usize,
}

#[derive(Deserialize)]
struct IngestLine {
    head: String,
    relation: String,
    tail: String,
}

/// Adds every `{"head","relation","tail"}` line of a JSONL file. Any `id`
/// field is ignored; the store assigns its own. Duplicates are counted.
pub fn ingest(store: &SharedStore, path: &Path) -> Result<IngestStats, RuntimeError> {
    let reader = BufReader::new(File::open(path)?);
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| RuntimeError::Ingest {
            path: path.display().to_string(),
            line: idx + 1,
            reason,
        };
        let raw: IngestLine = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        triples.push(Triple::new(&raw.head, &raw.relation, &raw.tail).map_err(|e| fail(e.to_string()))?);
    }
    // parse everything first so a bad line leaves the store untouched
    Ok(store.write(|s| {
        let mut stats = IngestStats::default();
        for t in triples {
            match s.add_triple(t).added() {
                Some(_) => stats.added += 1,
                None => stats.duplicates += 1,
            }
        }
        stats.triple_count = s.len();
        stats
    }))
}
