//! Application configuration.
//!
//! Every key can come from four places. Later layers win:
//! built-in default, config file, `WTS_<KEY>` environment variable, command
//! line. Keys are flat (`max_depth = 4`, not `[pipeline] max_depth = 4`).
//! API keys are never read from the file; see [`wts_core::llm::remote`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use wts_core::embedding::DEFAULT_HASH_SEED;
use wts_core::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("could not read config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("config key `{0}` looks like a secret; pass it through the environment instead")]
    SecretInFile(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Mock,
    Remote,
}

/// Where a key's effective value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Default,
    File,
    Env,
    Cli,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppConfig {
    pub store_path: PathBuf,
    pub audit_log: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub embed_seed: u64,
    pub llm: LlmKind,
    pub mock_script: Option<PathBuf>,
    pub domain: String,
    pub bind: String,
    pub sessions_path: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    /// Keys set by anything other than the defaults.
    #[serde(skip)]
    pub origins: BTreeMap<String, Origin>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            store_path: PathBuf::from("kg.jsonl"),
            audit_log: None,
            embedder: EmbedderKind::Hash,
            embed_seed: DEFAULT_HASH_SEED,
            llm: LlmKind::Remote,
            mock_script: None,
            domain: "medical".to_owned(),
            bind: "127.0.0.1:8080".to_owned(),
            sessions_path: None,
            static_dir: None,
            pipeline: PipelineConfig::default(),
            origins: BTreeMap::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "store_path",
    "audit_log",
    "embedder",
    "embed_seed",
    "llm",
    "mock_script",
    "domain",
    "bind",
    "sessions_path",
    "static_dir",
    "max_entities",
    "max_depth",
    "prune_width",
    "max_hop",
    "similarity_gap",
    "redundancy_gap",
    "strategy",
    "mode",
    "temperature",
    "max_tokens",
    "retries",
];

fn env_name(key: &str) -> String {
    format!("WTS_{}", key.to_uppercase())
}

fn looks_secret(key: &str) -> bool {
    let k = key.to_lowercase();
    ["key", "secret", "token", "password"].iter().any(|w| k.contains(w))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl AppConfig {
    /// Sets one key from its textual form.
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let invalid = |reason: String| ConfigError::InvalidValue {
            key: key.to_owned(),
            value: value.to_owned(),
            reason,
        };
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.trim().parse::<T>().map_err(|e| e.to_string())
        }
        fn tag<T: serde::de::DeserializeOwned>(v: &str) -> Result<T, String> {
            serde_json::from_value(Value::String(v.trim().to_owned())).map_err(|e| e.to_string())
        }
        let p = &mut self.pipeline;
        match key {
            "store_path" => self.store_path = PathBuf::from(value.trim()),
            "audit_log" => self.audit_log = optional_path(value),
            "embedder" => self.embedder = tag(&value.to_lowercase()).map_err(invalid)?,
            "embed_seed" => self.embed_seed = num(value).map_err(invalid)?,
            "llm" => self.llm = tag(&value.to_lowercase()).map_err(invalid)?,
            "mock_script" => self.mock_script = optional_path(value),
            "domain" => self.domain = value.trim().to_owned(),
            "bind" => self.bind = value.trim().to_owned(),
            "sessions_path" => self.sessions_path = optional_path(value),
            "static_dir" => self.static_dir = optional_path(value),
            "max_entities" => p.max_entities = num(value).map_err(invalid)?,
            "max_depth" => p.max_depth = num(value).map_err(invalid)?,
            "prune_width" => p.prune_width = num(value).map_err(invalid)?,
            "max_hop" => p.max_hop = num(value).map_err(invalid)?,
            "similarity_gap" => p.similarity_gap = num(value).map_err(invalid)?,
            "redundancy_gap" => p.redundancy_gap = num(value).map_err(invalid)?,
            "strategy" => p.strategy = tag(value).map_err(invalid)?,
            "mode" => p.mode = tag(&value.to_lowercase()).map_err(invalid)?,
            "temperature" => p.gen.temperature = num(value).map_err(invalid)?,
            "max_tokens" => p.gen.max_tokens = num(value).map_err(invalid)?,
            "retries" => p.gen.retries = num(value).map_err(invalid)?,
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        self.origins.insert(key.to_owned(), origin);
        Ok(())
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.origins.get(key).copied().unwrap_or(Origin::Default)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.origin(key) != Origin::Default
    }

    /// Applies a flat TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::File {
            path: PathBuf::new(),
            reason: e.to_string(),
        })?;
        for (key, value) in table {
            if !KEYS.contains(&key.as_str()) {
                if looks_secret(&key) {
                    return Err(ConfigError::SecretInFile(key));
                }
                return Err(ConfigError::UnknownKey(key));
            }
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(ConfigError::InvalidValue {
                        key,
                        value: other.to_string(),
                        reason: "expected a string or number".into(),
                    })
                }
            };
            self.set(&key, &text, Origin::File)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        self.apply_toml(&text).map_err(|e| match e {
            ConfigError::File { reason, .. } => ConfigError::File { path: path.to_owned(), reason },
            other => other,
        })
    }

    /// Applies `WTS_<KEY>` variables found through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for key in KEYS {
            if let Some(value) = lookup(&env_name(key)) {
                self.set(key, &value, Origin::Env)?;
            }
        }
        Ok(())
    }

    /// Applies `key=value` pairs given on the command line.
    pub fn apply_cli<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), ConfigError> {
        for (key, value) in pairs {
            self.set(key, value, Origin::Cli)?;
        }
        Ok(())
    }

    /// Resolves all layers. `file` is optional; `env` is usually `std::env::var(..).ok()`.
    pub fn resolve<'a>(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        cli: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        if let Some(path) = file {
            config.apply_file(path)?;
        }
        config.apply_env(env)?;
        config.apply_cli(cli)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.llm == LlmKind::Mock {
            match &self.mock_script {
                None => return Err(ConfigError::Invalid("llm = \"mock\" needs mock_script".into())),
                Some(p) if !p.is_file() => {
                    return Err(ConfigError::Invalid(format!("mock script {} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                return Err(ConfigError::Invalid(format!("static_dir {} is not a directory", dir.display())));
            }
        }
        for path in [Some(&self.store_path), self.audit_log.as_ref(), self.sessions_path.as_ref()]
            .into_iter()
            .flatten()
        {
            if path.is_dir() {
                return Err(ConfigError::Invalid(format!("{} is a directory", path.display())));
            }
        }
        if self.domain.is_empty() {
            return Err(ConfigError::Invalid("domain must not be empty".into()));
        }
        Ok(())
    }

    /// Serializable view with the origin of each key and secrets redacted.
    pub fn redacted(&self, env: impl Fn(&str) -> Option<String>) -> Value {
        use wts_core::llm::remote::{ENV_API_KEY, ENV_BASE_URL, ENV_EMBED_MODEL, ENV_MODEL};
        let mut view = serde_json::to_value(self).unwrap_or(Value::Null);
        let origins: BTreeMap<&str, Origin> = KEYS.iter().map(|k| (*k, self.origin(k))).collect();
        view["origins"] = serde_json::to_value(origins).unwrap_or(Value::Null);
        view["remote"] = serde_json::json!({
            "base_url": env(ENV_BASE_URL),
            "model": env(ENV_MODEL),
            "embed_model": env(ENV_EMBED_MODEL),
            "api_key": env(ENV_API_KEY).map(|_| "<redacted>"),
        });
        view
    }
}

/// Parses `key=value`.
pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}
