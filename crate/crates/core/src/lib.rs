//! Question answering over an evolving domain knowledge graph.
//!
//! Questions are answered by an iterative retrieve → prune → reason loop over
//! a triple store ([`pipeline`]); answered questions are mined for new triples
//! that flow back into the store ([`evolution`]). [`eval`] drives batch runs
//! and computes metrics.

pub mod embedding;
pub mod eval;
pub mod evolution;
pub mod llm;
pub mod pipeline;
pub mod question;
pub mod store;

pub use embedding::{
    cosine_distance, similarity_filter, triple_text, CachedEmbedder, EmbedError, Embedder,
    EmbeddingVector, HashEmbedder, RemoteEmbedder,
};
pub use evolution::{evolve, mastership_evolve, redundancy_check, AuditLog, EvolutionRecord, Redundancy, Verdict};
pub use llm::{
    Confidence, GenParams, Gateway, LlmClient, LlmError, MockLlm, PromptKind, PromptSet,
    ReasonedAnswer, RemoteLlm, ScoredTriple,
};
pub use pipeline::{
    answer_question, Engine, Evidence, Mode, PipelineConfig, PipelineError, PipelineResult,
    RetrievalStrategy, Trigger,
};
pub use question::{Answer, DatasetKind, Question};
pub use store::{AddOutcome, DkgStore, SharedStore, StoreError, StoreStats, Triple, TripleId};
