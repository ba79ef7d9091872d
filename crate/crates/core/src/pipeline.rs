//! The retrieve → prune → reason loop.
//!
//! For each depth `d = 1..=D` the engine gathers every triple touching the
//! current entity frontier, optionally filters them by embedding distance,
//! keeps the `K` most relevant according to the model, and asks the model to
//! answer from everything accumulated so far. A positive confidence ends the
//! loop early. Whether the answered question should feed back into the graph
//! is decided from the confidence and the depth at exit.

use std::collections::BTreeSet;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_distance, triple_text, EmbedError, Embedder, EmbeddingVector};
use crate::llm::{
    relevance_order, Confidence, GenParams, Gateway, LlmClient, LlmError, PromptSet, ReasonedAnswer,
};
use crate::question::{Question, QuestionError};
use crate::store::{DkgStore, Triple};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// How exact-match candidates are refined before pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RetrievalStrategy {
    /// Exact match only.
    #[serde(rename = "em", alias = "EM")]
    ExactMatch,
    /// Exact match, then distance to the extracted topic entities.
    #[serde(rename = "em_esr", alias = "EM_ESR")]
    EntitySimilarity,
    /// Exact match, then distance to the question.
    #[default]
    #[serde(rename = "em_qsr", alias = "EM_QSR")]
    QuestionSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Gold answers arrive after each question.
    #[default]
    Apprenticeship,
    /// No gold answers; user feedback decides what is harvested.
    Mastership,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Maximum entities extracted from a question.
    pub max_entities: usize,
    /// Maximum retrieval depth.
    pub max_depth: usize,
    /// Triples kept per depth after pruning.
    pub prune_width: usize,
    /// Depth up to which a confident answer skips evolution.
    pub max_hop: usize,
    /// Maximum question/triple distance kept by similarity retrieval.
    pub similarity_gap: f64,
    /// Distance at or below which a generated triple counts as redundant.
    pub redundancy_gap: f64,
    pub strategy: RetrievalStrategy,
    pub gen: GenParams,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_entities: 5,
            max_depth: 3,
            prune_width: 5,
            max_hop: 1,
            similarity_gap: crate::embedding::DEFAULT_SIMILARITY_GAP,
            redundancy_gap: 0.1,
            strategy: RetrievalStrategy::default(),
            gen: GenParams::default(),
            mode: Mode::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: &str| Err(PipelineError::Config(msg.to_owned()));
        if self.max_entities == 0 {
            return fail("max_entities must be at least 1");
        }
        if self.max_hop == 0 || self.max_hop >= self.max_depth {
            return fail("max_hop must satisfy 1 <= max_hop < max_depth");
        }
        if self.prune_width == 0 {
            return fail("prune_width must be at least 1");
        }
        if !self.similarity_gap.is_finite() || self.similarity_gap < 0.0 {
            return fail("similarity_gap must be a finite non-negative number");
        }
        if !self.redundancy_gap.is_finite() || self.redundancy_gap < 0.0 {
            return fail("redundancy_gap must be a finite non-negative number");
        }
        if !self.gen.temperature.is_finite() || self.gen.temperature < 0.0 || self.gen.max_tokens == 0 {
            return fail("temperature must be >= 0 and max_tokens positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    None,
    EvolveAfterPositive,
    EvolveAfterNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    InherentOnly,
    TriplesUsed,
}

/// What the loop does after reasoning at depth `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Stop(Trigger),
    Continue,
}

pub fn next_step(confidence: Confidence, depth: usize, max_hop: usize, max_depth: usize) -> Step {
    match confidence {
        Confidence::Positive if depth <= max_hop => Step::Stop(Trigger::None),
        Confidence::Positive => Step::Stop(Trigger::EvolveAfterPositive),
        Confidence::Negative if depth >= max_depth => Step::Stop(Trigger::EvolveAfterNegative),
        Confidence::Negative => Step::Continue,
    }
}

/// Everything the loop needs besides the question and the store.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub config: &'a PipelineConfig,
    pub prompts: &'a PromptSet,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn LlmClient,
}

impl<'a> Engine<'a> {
    pub fn new(
        config: &'a PipelineConfig,
        prompts: &'a PromptSet,
        embedder: &'a dyn Embedder,
        llm: &'a dyn LlmClient,
    ) -> Self {
        Self { config, prompts, embedder, llm }
    }

    pub fn gateway(&self) -> Gateway<'a> {
        Gateway::new(self.llm, self.prompts, &self.config.gen)
    }
}

/// A retrieved triple with its embedding distance, when one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub triple: Triple,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrace {
    pub depth: usize,
    pub frontier: Vec<String>,
    pub retrieved: Vec<Triple>,
    pub pruned: Vec<Triple>,
    pub answer: ReasonedAnswer,
    pub reason_malformed: bool,
}

/// Per-question loop state.
#[derive(Debug, Clone, Default)]
pub struct RetrievalState {
    pub depth: usize,
    pub frontier: IndexSet<String>,
    /// Every entity that has been part of a frontier, including the current one.
    pub visited: IndexSet<String>,
    pub accumulated: IndexSet<Triple>,
}

impl RetrievalState {
    pub fn new(entities: impl IntoIterator<Item = String>) -> Self {
        let frontier: IndexSet<String> = entities.into_iter().collect();
        Self {
            depth: 1,
            visited: frontier.clone(),
            frontier,
            accumulated: IndexSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub question_id: String,
    pub entities: Vec<String>,
    pub answer: ReasonedAnswer,
    pub depth_used: usize,
    pub accumulated: Vec<Triple>,
    pub trigger: Trigger,
    pub evidence: Evidence,
    pub trace: Vec<DepthTrace>,
}

pub fn evidence_of(result: &PipelineResult) -> Evidence {
    if result.accumulated.is_empty() {
        Evidence::InherentOnly
    } else {
        Evidence::TriplesUsed
    }
}

/// Question and topic-entity embeddings, computed at most once per question.
pub struct QueryAnchors<'q> {
    question: &'q str,
    entities: &'q [String],
    question_vec: Option<EmbeddingVector>,
    entity_vecs: Option<Vec<EmbeddingVector>>,
}

impl<'q> QueryAnchors<'q> {
    pub fn new(question: &'q str, entities: &'q [String]) -> Self {
        Self { question, entities, question_vec: None, entity_vecs: None }
    }

    fn question_vec(&mut self, embedder: &dyn Embedder) -> Result<&EmbeddingVector, EmbedError> {
        if self.question_vec.is_none() {
            self.question_vec = Some(embedder.embed(self.question)?);
        }
        Ok(self.question_vec.as_ref().expect("set above"))
    }

    fn entity_vecs(&mut self, embedder: &dyn Embedder) -> Result<&[EmbeddingVector], EmbedError> {
        if self.entity_vecs.is_none() {
            let texts: Vec<&str> = self.entities.iter().map(String::as_str).collect();
            self.entity_vecs = Some(embedder.embed_batch(&texts)?);
        }
        Ok(self.entity_vecs.as_deref().expect("set above"))
    }
}

/// Triples touching the frontier that are not yet accumulated, refined by the
/// configured strategy. Returned in ascending id order.
pub fn retrieve_depth(
    state: &RetrievalState,
    config: &PipelineConfig,
    store: &DkgStore,
    embedder: &dyn Embedder,
    anchors: &mut QueryAnchors<'_>,
) -> Result<Vec<Candidate>, EmbedError> {
    let ids: BTreeSet<_> = state
        .frontier
        .iter()
        .flat_map(|e| store.exact_match_ids(e))
        .collect();
    let matched: Vec<Triple> = ids
        .into_iter()
        .filter_map(|id| store.get(id))
        .filter(|t| !state.accumulated.contains(*t))
        .cloned()
        .collect();
    if matched.is_empty() || config.strategy == RetrievalStrategy::ExactMatch {
        return Ok(matched
            .into_iter()
            .map(|triple| Candidate { triple, distance: None })
            .collect());
    }
    let texts: Vec<String> = matched.iter().map(triple_text).collect();
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vecs = embedder.embed_batch(&text_refs)?;
    let mut kept = Vec::new();
    for (triple, vec) in matched.into_iter().zip(&vecs) {
        let distance = match config.strategy {
            RetrievalStrategy::QuestionSimilarity => cosine_distance(anchors.question_vec(embedder)?, vec)?,
            RetrievalStrategy::EntitySimilarity => {
                let mut best = f64::INFINITY;
                for anchor in anchors.entity_vecs(embedder)? {
                    best = best.min(cosine_distance(anchor, vec)?);
                }
                best
            }
            RetrievalStrategy::ExactMatch => unreachable!("handled above"),
        };
        if distance <= config.similarity_gap {
            kept.push(Candidate { triple, distance: Some(distance) });
        }
    }
    Ok(kept)
}

/// Keeps at most `width` candidates, highest model relevance first, ties by
/// triple text. At or under the width no model call is made and candidates
/// come back in triple-text order. If the model never replies usably, the
/// closest candidates by embedding distance are kept instead.
pub fn prune(
    gateway: &Gateway<'_>,
    question: &Question,
    candidates: &[Candidate],
    width: usize,
) -> Result<Vec<Triple>, LlmError> {
    if candidates.len() <= width {
        let mut kept: Vec<Triple> = candidates.iter().map(|c| c.triple.clone()).collect();
        kept.sort_by_cached_key(Triple::text);
        return Ok(kept);
    }
    let triples: Vec<Triple> = candidates.iter().map(|c| c.triple.clone()).collect();
    match gateway.score_triples(question, &triples) {
        Ok(mut scored) => {
            scored.sort_by(relevance_order);
            Ok(scored.into_iter().take(width).map(|s| s.triple).collect())
        }
        Err(err) if err.is_malformed() => {
            tracing::warn!(%err, "relevance scoring failed, falling back to similarity order");
            let mut ordered: Vec<&Candidate> = candidates.iter().collect();
            ordered.sort_by(|a, b| {
                let da = a.distance.unwrap_or(f64::INFINITY);
                let db = b.distance.unwrap_or(f64::INFINITY);
                da.total_cmp(&db).then_with(|| a.triple.text().cmp(&b.triple.text()))
            });
            Ok(ordered.into_iter().take(width).map(|c| c.triple.clone()).collect())
        }
        Err(err) => Err(err),
    }
}

/// Entities of the pruned triples not visited yet; they become the next
/// frontier and are marked visited.
pub fn update_frontier(state: &mut RetrievalState, pruned: &[Triple]) -> IndexSet<String> {
    let mut next = IndexSet::new();
    for t in pruned {
        for entity in [t.head(), t.tail()] {
            if !state.visited.contains(entity) {
                next.insert(entity.to_owned());
            }
        }
    }
    state.visited.extend(next.iter().cloned());
    next
}

pub fn answer_question(
    engine: &Engine<'_>,
    question: &Question,
    store: &DkgStore,
) -> Result<PipelineResult, PipelineError> {
    let config = engine.config;
    config.validate()?;
    question.validate()?;
    let gateway = engine.gateway();

    let entities = gateway.extract_entities(question, config.max_entities)?;
    let mut anchors = QueryAnchors::new(&question.text, &entities);
    let mut state = RetrievalState::new(entities.iter().cloned());
    let mut trace = Vec::new();

    loop {
        let depth = state.depth;
        let candidates = retrieve_depth(&state, config, store, engine.embedder, &mut anchors)?;
        let pruned = prune(&gateway, question, &candidates, config.prune_width)?;
        state.accumulated.extend(pruned.iter().cloned());
        let frontier_now: Vec<String> = state.frontier.iter().cloned().collect();
        let next_frontier = update_frontier(&mut state, &pruned);

        let accumulated: Vec<Triple> = state.accumulated.iter().cloned().collect();
        let (answer, reason_malformed) = match gateway.reason(question, &accumulated) {
            Ok(answer) => (answer, false),
            Err(err) if err.is_malformed() => {
                tracing::warn!(question = %question.id, depth, %err, "reasoning reply unusable, treating as negative");
                (ReasonedAnswer::unparsed(), true)
            }
            Err(err) => return Err(err.into()),
        };
        let confidence = answer.confidence;
        trace.push(DepthTrace {
            depth,
            frontier: frontier_now,
            retrieved: candidates.into_iter().map(|c| c.triple).collect(),
            pruned,
            answer: answer.clone(),
            reason_malformed,
        });

        if let Step::Stop(trigger) = next_step(confidence, depth, config.max_hop, config.max_depth) {
            let mut result = PipelineResult {
                question_id: question.id.clone(),
                entities,
                answer,
                depth_used: depth,
                accumulated,
                trigger,
                evidence: Evidence::InherentOnly,
                trace,
            };
            result.evidence = evidence_of(&result);
            return Ok(result);
        }
        state.frontier = next_frontier;
        state.depth += 1;
    }
}
