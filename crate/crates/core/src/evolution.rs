//! Growing the graph from answered questions.
//!
//! The model proposes candidate triples from a question, an answer and the
//! entities already retrieved for it. Each candidate is screened in order:
//! exact duplicates are dropped, as are candidates whose embedding lies within
//! the redundancy gap of a stored triple or of a candidate accepted earlier in
//! the same batch. Survivors are committed in one write.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_distance, triple_text, EmbedError, Embedder, EmbeddingVector};
use crate::pipeline::{Engine, Mode, PipelineResult};
use crate::question::Question;
use crate::store::{AddOutcome, DkgStore, SharedStore, Triple, TripleId};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("feedback-driven evolution requires mastership mode")]
    WrongMode,
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarSkip {
    pub candidate: Triple,
    pub existing: Triple,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedTriple {
    pub id: TripleId,
    pub triple: Triple,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvolutionRecord {
    pub question_id: String,
    pub candidates: Vec<Triple>,
    pub added: Vec<AddedTriple>,
    pub skipped_exact: Vec<Triple>,
    pub skipped_similar: Vec<SimilarSkip>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvolutionRecord {
    pub fn empty(question_id: &str) -> Self {
        Self { question_id: question_id.to_owned(), ..Self::default() }
    }

    pub fn added_ids(&self) -> Vec<TripleId> {
        self.added.iter().map(|a| a.id).collect()
    }

    /// Every candidate lands in exactly one of added / skipped_exact / skipped_similar.
    pub fn is_partition(&self) -> bool {
        let mut sorted_out: Vec<&Triple> = self
            .added
            .iter()
            .map(|a| &a.triple)
            .chain(&self.skipped_exact)
            .chain(self.skipped_similar.iter().map(|s| &s.candidate))
            .collect();
        let mut sorted_in: Vec<&Triple> = self.candidates.iter().collect();
        sorted_out.sort();
        sorted_in.sort();
        sorted_out == sorted_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Redundancy {
    Keep,
    SkipExact,
    SkipSimilar { existing: Triple, distance: f64 },
}

/// Stored triples paired with their embeddings, plus accepted candidates.
struct Screen<'a> {
    embedder: &'a dyn Embedder,
    gap: f64,
    known: Vec<(Triple, EmbeddingVector)>,
}

impl<'a> Screen<'a> {
    fn new(store: &DkgStore, embedder: &'a dyn Embedder, gap: f64) -> Result<Self, EmbedError> {
        let triples: Vec<Triple> = store.iter().map(|(_, t)| t.clone()).collect();
        let texts: Vec<String> = triples.iter().map(triple_text).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vecs = if refs.is_empty() { Vec::new() } else { embedder.embed_batch(&refs)? };
        Ok(Self { embedder, gap, known: triples.into_iter().zip(vecs).collect() })
    }

    fn check(&self, candidate: &Triple) -> Result<(Redundancy, EmbeddingVector), EmbedError> {
        let vec = self.embedder.embed(&triple_text(candidate))?;
        if self.known.iter().any(|(t, _)| t == candidate) {
            return Ok((Redundancy::SkipExact, vec));
        }
        let mut best: Option<(&Triple, f64)> = None;
        for (t, v) in &self.known {
            let d = cosine_distance(v, &vec)?;
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((t, d));
            }
        }
        let verdict = match best {
            Some((existing, distance)) if distance <= self.gap => Redundancy::SkipSimilar {
                existing: existing.clone(),
                distance,
            },
            _ => Redundancy::Keep,
        };
        Ok((verdict, vec))
    }

    fn accept(&mut self, triple: Triple, vec: EmbeddingVector) {
        self.known.push((triple, vec));
    }
}

/// Exact duplicate, else nearest stored triple within `gap`, else keep.
pub fn redundancy_check(
    triple: &Triple,
    store: &DkgStore,
    gap: f64,
    embedder: &dyn Embedder,
) -> Result<Redundancy, EmbedError> {
    if store.contains_exact(triple) {
        return Ok(Redundancy::SkipExact);
    }
    Screen::new(store, embedder, gap)?.check(triple).map(|(r, _)| r)
}

/// Generates, screens and commits new triples for one question.
///
/// A generation failure produces an empty record with `error` set and leaves
/// the store untouched.
pub fn evolve(
    engine: &Engine<'_>,
    store: &SharedStore,
    question: &Question,
    gold: &str,
    context: &[Triple],
) -> Result<EvolutionRecord, EvolutionError> {
    let mut record = EvolutionRecord::empty(&question.id);
    let candidates = match engine.gateway().generate_triples(question, gold, context) {
        Ok(c) => c,
        Err(err) => {
            tracing::warn!(question = %question.id, %err, "triple generation failed");
            record.error = Some(err.to_string());
            return Ok(record);
        }
    };
    record.candidates = candidates.clone();
    if candidates.is_empty() {
        return Ok(record);
    }

    let snapshot = store.snapshot();
    let mut screen = Screen::new(&snapshot, engine.embedder, engine.config.redundancy_gap)?;
    let mut accepted = Vec::new();
    for candidate in candidates {
        match screen.check(&candidate)? {
            (Redundancy::Keep, vec) => {
                screen.accept(candidate.clone(), vec);
                accepted.push(candidate);
            }
            (Redundancy::SkipExact, _) => record.skipped_exact.push(candidate),
            (Redundancy::SkipSimilar { existing, distance }, _) => {
                record.skipped_similar.push(SimilarSkip { candidate, existing, distance })
            }
        }
    }

    store.write(|s| {
        for triple in accepted {
            match s.add_triple(triple.clone()) {
                AddOutcome::Added(id) => record.added.push(AddedTriple { id, triple }),
                // a concurrent commit got there first
                AddOutcome::RejectedDuplicate(_) => record.skipped_exact.push(triple),
            }
        }
    });
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Negative,
    #[default]
    None,
}

/// Positive feedback harvests the generated answer as gold; otherwise the
/// question alone drives generation.
pub fn mastership_evolve(
    engine: &Engine<'_>,
    store: &SharedStore,
    question: &Question,
    result: &PipelineResult,
    verdict: Verdict,
) -> Result<EvolutionRecord, EvolutionError> {
    if engine.config.mode != Mode::Mastership {
        return Err(EvolutionError::WrongMode);
    }
    let gold = match verdict {
        Verdict::Positive => question.answer_text(&result.answer.answer),
        Verdict::Negative | Verdict::None => String::new(),
    };
    evolve(engine, store, question, &gold, &result.accumulated)
}

/// Append-only JSONL log of evolution records.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &EvolutionRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::from)?;
        line.push(b'\n');
        let mut file = self.file.lock();
        file.write_all(&line)?;
        file.flush()
    }
}
