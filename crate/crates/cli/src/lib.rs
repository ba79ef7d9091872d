//! Configuration, client wiring and the HTTP service behind the `wts` binary.

pub mod config;
pub mod runtime;
pub mod service;

pub use config::{AppConfig, ConfigError, EmbedderKind, LlmKind, Origin};
pub use runtime::{ingest, IngestStats, Runtime, RuntimeError};
pub use service::{router, AppState};
