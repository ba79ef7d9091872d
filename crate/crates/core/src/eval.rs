//! Dataset loading, metrics and batch runs.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, Embedder};
use crate::evolution::{evolve, mastership_evolve, AuditLog, EvolutionError, EvolutionRecord, Verdict};
use crate::llm::{Confidence, Gateway};
use crate::pipeline::{answer_question, Engine, Evidence, Mode, PipelineResult, Trigger};
use crate::question::{Answer, DatasetKind, Question};
use crate::store::{normalize, SharedStore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("record at line {line} does not fit source {source_tag:?}: {reason}")]
    KindMismatch { line: usize, source_tag: Source, reason: String },
    #[error("predictions and golds differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("record {0} has no gold answer")]
    MissingGold(String),
    #[error("run mode does not match engine mode")]
    WrongMode,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Chatdoctor,
    Pubmedqa,
    Medmcqa,
    Sciq,
    Scienceqa,
    Simpleqa,
    Custom,
}

impl Source {
    pub fn parse(tag: &str) -> Option<Self> {
        serde_json::from_value(Value::String(tag.trim().to_lowercase())).ok()
    }

    /// Question kind implied by the source; `None` for custom data.
    pub fn kind(self) -> Option<DatasetKind> {
        match self {
            Source::Chatdoctor => Some(DatasetKind::Generation),
            Source::Pubmedqa => Some(DatasetKind::TrueFalse),
            Source::Custom => None,
            _ => Some(DatasetKind::MultipleChoice),
        }
    }

    /// Maximum retrieval depth used for each source in reference runs.
    pub fn default_depth(self) -> usize {
        match self {
            Source::Chatdoctor | Source::Sciq => 2,
            Source::Medmcqa => 4,
            Source::Pubmedqa | Source::Scienceqa | Source::Simpleqa | Source::Custom => 3,
        }
    }
}

const YES_NO_MAYBE: [&str; 3] = ["yes", "no", "maybe"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub question: Question,
    pub source: Source,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Value,
    question: String,
    #[serde(default)]
    options: Option<Vec<String>>,
    #[serde(default)]
    answer: Option<Value>,
    #[serde(default)]
    answer_index: Option<usize>,
}

/// Reads a JSONL dataset of `{"id","question","options"?,"answer"?,"answer_index"?}`.
pub fn load_dataset(path: impl AsRef<Path>, source: Source) -> Result<Vec<DatasetRecord>, EvalError> {
    read_dataset(BufReader::new(File::open(path)?), source)
}

pub fn read_dataset(reader: impl BufRead, source: Source) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let format = |reason: String| EvalError::Format { line: line_no, reason };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| format(e.to_string()))?;
        let id = match raw.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => return Err(format(format!("unsupported id {other}"))),
        };
        if raw.question.trim().is_empty() {
            return Err(format("empty question".into()));
        }

        let mismatch = |reason: &str| EvalError::KindMismatch {
            line: line_no,
            source_tag: source,
            reason: reason.to_owned(),
        };
        let mut options = raw.options.filter(|o| !o.is_empty());
        let kind = match source.kind() {
            Some(DatasetKind::Generation) if options.is_some() => {
                return Err(mismatch("generation records carry no options"))
            }
            Some(DatasetKind::TrueFalse) => {
                options.get_or_insert_with(|| YES_NO_MAYBE.iter().map(|s| s.to_string()).collect());
                DatasetKind::TrueFalse
            }
            Some(DatasetKind::MultipleChoice) if options.is_none() => {
                return Err(mismatch("choice records need options"))
            }
            Some(kind) => kind,
            None if options.is_some() => DatasetKind::MultipleChoice,
            None => DatasetKind::Generation,
        };

        let gold = match (raw.answer_index, raw.answer) {
            (Some(i), _) => Some(Answer::Option(i)),
            (None, None) | (None, Some(Value::Null)) => None,
            (None, Some(Value::Number(n))) if kind.has_options() => {
                let i = n.as_u64().ok_or_else(|| format(format!("bad answer index {n}")))?;
                Some(Answer::Option(i as usize))
            }
            (None, Some(Value::String(s))) if kind.has_options() => {
                let opts = options.as_deref().unwrap_or_default();
                let wanted = normalize(&s);
                let i = opts
                    .iter()
                    .position(|o| normalize(o) == wanted)
                    .ok_or_else(|| format(format!("answer {s:?} matches no option")))?;
                Some(Answer::Option(i))
            }
            (None, Some(Value::String(s))) => Some(Answer::Text(s)),
            (None, Some(other)) => return Err(format(format!("unsupported answer {other}"))),
        };
        if gold.is_some() && !kind.has_options() && matches!(gold, Some(Answer::Option(_))) {
            return Err(mismatch("generation records need a text answer"));
        }

        let question = Question::new(id, raw.question, options, gold, kind)
            .map_err(|e| format(e.to_string()))?;
        out.push(DatasetRecord { question, source });
    }
    Ok(out)
}

pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), golds.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Greedy-matching precision/recall/F1 between token sequences.
///
/// Each reference token is matched to its most similar candidate token
/// (recall) and vice versa (precision). Per-token best similarities are
/// floored at zero so scores stay in `[0, 1]`.
pub fn greedy_match_score(
    candidate: &[String],
    reference: &[String],
    embedder: &dyn Embedder,
) -> Result<ScoreTriple, EvalError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let cand_refs: Vec<&str> = candidate.iter().map(String::as_str).collect();
    let ref_refs: Vec<&str> = reference.iter().map(String::as_str).collect();
    let cand_vecs = embedder.embed_batch(&cand_refs)?;
    let ref_vecs = embedder.embed_batch(&ref_refs)?;

    let mut sim = vec![vec![0.0; cand_vecs.len()]; ref_vecs.len()];
    for (i, r) in ref_vecs.iter().enumerate() {
        for (j, c) in cand_vecs.iter().enumerate() {
            sim[i][j] = cosine_similarity(r, c)?;
        }
    }
    let best = |values: &mut dyn Iterator<Item = f64>| {
        values.fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0)
    };
    let recall = (0..ref_vecs.len())
        .map(|i| best(&mut sim[i].iter().copied()))
        .sum::<f64>()
        / ref_vecs.len() as f64;
    let precision = (0..cand_vecs.len())
        .map(|j| best(&mut sim.iter().map(|row| row[j])))
        .sum::<f64>()
        / cand_vecs.len() as f64;
    Ok(ScoreTriple::from_precision_recall(precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Apprenticeship,
    Mastership,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLog {
    pub question_id: String,
    pub answer: Option<Answer>,
    pub confidence: Option<Confidence>,
    /// Set for choice questions with a gold answer.
    pub correct: Option<bool>,
    /// Set for free-text questions with a reference answer.
    pub score: Option<ScoreTriple>,
    pub depth_used: Option<usize>,
    pub evidence: Option<Evidence>,
    pub trigger: Option<Trigger>,
    pub verdict: Option<Verdict>,
    pub triples_added: usize,
    pub kg_size: usize,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthBin {
    pub depth: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerdictTally {
    pub positive: usize,
    pub negative: usize,
    pub none: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub questions: usize,
    pub answered: usize,
    pub errored: usize,
    pub correct: usize,
    pub graded: usize,
    pub accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    pub triples_added: usize,
    pub initial_kg_size: usize,
    pub final_kg_size: usize,
    pub inherent_only: usize,
    pub triples_used: usize,
    pub total_elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub max_depth: usize,
    /// Question ids in processing order.
    pub order: Vec<String>,
    pub entries: Vec<QuestionLog>,
    /// Rolling accuracy over graded choice questions; empty without golds.
    pub accuracy_series: Vec<f64>,
    /// Rolling mean greedy-match F1 over free-text questions; empty without references.
    pub f1_series: Vec<f64>,
    pub kg_size_series: Vec<usize>,
    pub depth_histogram: Vec<DepthBin>,
    pub verdicts: Option<VerdictTally>,
    pub totals: Totals,
}

impl RunReport {
    pub fn new(mode: RunMode, max_depth: usize, initial_kg_size: usize) -> Self {
        Self {
            mode,
            max_depth,
            order: Vec::new(),
            entries: Vec::new(),
            accuracy_series: Vec::new(),
            f1_series: Vec::new(),
            kg_size_series: Vec::new(),
            depth_histogram: (1..=max_depth).map(|depth| DepthBin { depth, count: 0 }).collect(),
            verdicts: (mode == RunMode::Mastership).then(VerdictTally::default),
            totals: Totals {
                initial_kg_size,
                final_kg_size: initial_kg_size,
                ..Totals::default()
            },
        }
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut copy = self.clone();
        copy.entries.iter_mut().for_each(|e| e.elapsed_ms = 0.0);
        copy.totals.total_elapsed_ms = 0.0;
        copy
    }

    fn push(&mut self, entry: QuestionLog) {
        let t = &mut self.totals;
        t.questions += 1;
        t.total_elapsed_ms += entry.elapsed_ms;
        t.triples_added += entry.triples_added;
        t.final_kg_size = entry.kg_size;
        if entry.error.is_some() && entry.answer.is_none() {
            t.errored += 1;
        } else {
            t.answered += 1;
        }
        if let Some(correct) = entry.correct {
            t.graded += 1;
            t.correct += usize::from(correct);
        }
        match entry.evidence {
            Some(Evidence::InherentOnly) => t.inherent_only += 1,
            Some(Evidence::TriplesUsed) => t.triples_used += 1,
            None => {}
        }
        if let Some(depth) = entry.depth_used {
            if let Some(bin) = self.depth_histogram.iter_mut().find(|b| b.depth == depth) {
                bin.count += 1;
            }
        }
        if let (Some(v), Some(tally)) = (entry.verdict, self.verdicts.as_mut()) {
            match v {
                Verdict::Positive => tally.positive += 1,
                Verdict::Negative => tally.negative += 1,
                Verdict::None => tally.none += 1,
            }
        }
        self.order.push(entry.question_id.clone());
        self.kg_size_series.push(entry.kg_size);
        self.entries.push(entry);

        self.totals.accuracy = (self.totals.graded > 0)
            .then(|| self.totals.correct as f64 / self.totals.graded as f64);
        let f1s: Vec<f64> = self.entries.iter().filter_map(|e| e.score.map(|s| s.f1)).collect();
        self.totals.mean_f1 = (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64);
    }

    /// Fills the rolling series once all entries are in.
    fn finish(&mut self) {
        let n = self.entries.len();
        self.accuracy_series.clear();
        self.f1_series.clear();
        if self.entries.iter().any(|e| e.correct.is_some()) {
            let (mut correct, mut graded) = (0usize, 0usize);
            for e in &self.entries {
                if let Some(c) = e.correct {
                    graded += 1;
                    correct += usize::from(c);
                }
                let value = if graded == 0 { 0.0 } else { correct as f64 / graded as f64 };
                self.accuracy_series.push(value);
            }
        }
        if self.entries.iter().any(|e| e.score.is_some()) {
            let (mut sum, mut count) = (0.0, 0usize);
            for e in &self.entries {
                if let Some(s) = e.score {
                    sum += s.f1;
                    count += 1;
                }
                self.f1_series.push(if count == 0 { 0.0 } else { sum / count as f64 });
            }
        }
        debug_assert!(self.accuracy_series.is_empty() || self.accuracy_series.len() == n);
    }
}

/// Grades an answer against the question's gold: choice questions by option
/// index, free-text questions by greedy-match score.
pub fn grade(
    question: &Question,
    answer: &Answer,
    embedder: &dyn Embedder,
) -> Result<(Option<bool>, Option<ScoreTriple>), EvalError> {
    let Some(gold) = &question.gold_answer else {
        return Ok((None, None));
    };
    if question.kind.has_options() {
        let gold_index = question.gold_index();
        let predicted = question.option_index(answer);
        return Ok((Some(gold_index.is_some() && predicted == gold_index), None));
    }
    let reference = tokenize(&question.answer_text(gold));
    let candidate = tokenize(&question.answer_text(answer));
    if reference.is_empty() {
        return Ok((None, None));
    }
    if candidate.is_empty() {
        return Ok((None, Some(ScoreTriple::from_precision_recall(0.0, 0.0))));
    }
    Ok((None, Some(greedy_match_score(&candidate, &reference, embedder)?)))
}

fn answered_entry(
    question: &Question,
    result: &PipelineResult,
    embedder: &dyn Embedder,
) -> Result<QuestionLog, EvalError> {
    let (correct, score) = grade(question, &result.answer.answer, embedder)?;
    Ok(QuestionLog {
        question_id: question.id.clone(),
        answer: Some(result.answer.answer.clone()),
        confidence: Some(result.answer.confidence),
        correct,
        score,
        depth_used: Some(result.depth_used),
        evidence: Some(result.evidence),
        trigger: Some(result.trigger),
        verdict: None,
        triples_added: 0,
        kg_size: 0,
        elapsed_ms: 0.0,
        error: None,
    })
}

fn errored_entry(question: &Question, error: String) -> QuestionLog {
    QuestionLog {
        question_id: question.id.clone(),
        answer: None,
        confidence: None,
        correct: None,
        score: None,
        depth_used: None,
        evidence: None,
        trigger: None,
        verdict: None,
        triples_added: 0,
        kg_size: 0,
        elapsed_ms: 0.0,
        error: Some(error),
    }
}

fn record_evolution(
    entry: &mut QuestionLog,
    outcome: Result<EvolutionRecord, EvolutionError>,
    audit: Option<&AuditLog>,
) {
    match outcome {
        Ok(record) => {
            entry.triples_added = record.added.len();
            if let Some(err) = &record.error {
                entry.error = Some(format!("evolution: {err}"));
            }
            if let Some(log) = audit {
                if let Err(err) = log.append(&record) {
                    tracing::warn!(%err, "could not append audit record");
                }
            }
        }
        Err(err) => {
            tracing::warn!(question = %entry.question_id, %err, "evolution failed");
            entry.error = Some(format!("evolution: {err}"));
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Answers each record in order and, whenever the loop asks for it, evolves
/// the graph with the record's gold answer before the next question.
pub fn run_apprenticeship(
    records: &[DatasetRecord],
    engine: &Engine<'_>,
    store: &SharedStore,
    audit: Option<&AuditLog>,
) -> Result<RunReport, EvalError> {
    if let Some(r) = records.iter().find(|r| r.question.gold_answer.is_none()) {
        return Err(EvalError::MissingGold(r.question.id.clone()));
    }
    let mut report = RunReport::new(RunMode::Apprenticeship, engine.config.max_depth, store.snapshot().len());
    for record in records {
        let q = &record.question;
        let start = Instant::now();
        let snapshot = store.snapshot();
        let mut entry = match answer_question(engine, q, &snapshot) {
            Ok(result) => {
                let mut entry = answered_entry(q, &result, engine.embedder)?;
                if result.trigger != Trigger::None {
                    let gold = q.answer_text(q.gold_answer.as_ref().expect("checked above"));
                    let outcome = evolve(engine, store, q, &gold, &result.accumulated);
                    record_evolution(&mut entry, outcome, audit);
                }
                entry
            }
            Err(err) => {
                tracing::warn!(question = %q.id, %err, "question failed");
                errored_entry(q, err.to_string())
            }
        };
        entry.kg_size = store.snapshot().len();
        entry.elapsed_ms = elapsed_ms(start);
        report.push(entry);
    }
    report.finish();
    Ok(report)
}

/// Supplies user feedback for an answered question.
pub trait FeedbackSource {
    fn verdict(&mut self, question: &Question, result: &PipelineResult) -> Verdict;
}

/// Replays verdicts in order, then answers `None`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFeedback(VecDeque<Verdict>);

impl ScriptedFeedback {
    pub fn new(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        Self(verdicts.into_iter().collect())
    }
}

impl FeedbackSource for ScriptedFeedback {
    fn verdict(&mut self, _: &Question, _: &PipelineResult) -> Verdict {
        self.0.pop_front().unwrap_or(Verdict::None)
    }
}

/// Simulated user who approves exactly the correct choice answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldFeedback;

impl FeedbackSource for GoldFeedback {
    fn verdict(&mut self, question: &Question, result: &PipelineResult) -> Verdict {
        match question.gold_index() {
            Some(gold) if question.option_index(&result.answer.answer) == Some(gold) => Verdict::Positive,
            Some(_) => Verdict::Negative,
            None => Verdict::None,
        }
    }
}

/// Answers each record, collects a verdict and evolves from it.
pub fn run_mastership(
    records: &[DatasetRecord],
    engine: &Engine<'_>,
    store: &SharedStore,
    feedback: &mut dyn FeedbackSource,
    audit: Option<&AuditLog>,
) -> Result<RunReport, EvalError> {
    if engine.config.mode != Mode::Mastership {
        return Err(EvalError::WrongMode);
    }
    let mut report = RunReport::new(RunMode::Mastership, engine.config.max_depth, store.snapshot().len());
    for record in records {
        let q = &record.question;
        let start = Instant::now();
        let snapshot = store.snapshot();
        let mut entry = match answer_question(engine, q, &snapshot) {
            Ok(result) => {
                let mut entry = answered_entry(q, &result, engine.embedder)?;
                let verdict = feedback.verdict(q, &result);
                entry.verdict = Some(verdict);
                let outcome = mastership_evolve(engine, store, q, &result, verdict);
                record_evolution(&mut entry, outcome, audit);
                entry
            }
            Err(err) => {
                tracing::warn!(question = %q.id, %err, "question failed");
                errored_entry(q, err.to_string())
            }
        };
        entry.kg_size = store.snapshot().len();
        entry.elapsed_ms = elapsed_ms(start);
        report.push(entry);
    }
    report.finish();
    Ok(report)
}

/// Retrieval-free baseline: one direct prompt per question, no graph.
pub fn run_baseline(
    records: &[DatasetRecord],
    gateway: &Gateway<'_>,
    embedder: &dyn Embedder,
) -> Result<RunReport, EvalError> {
    let mut report = RunReport::new(RunMode::Baseline, 0, 0);
    for record in records {
        let q = &record.question;
        let start = Instant::now();
        let mut entry = match gateway.direct_answer(q) {
            Ok(answer) => {
                let (correct, score) = grade(q, &answer, embedder)?;
                QuestionLog {
                    answer: Some(answer),
                    correct,
                    score,
                    error: None,
                    ..errored_entry(q, String::new())
                }
            }
            Err(err) => errored_entry(q, err.to_string()),
        };
        entry.elapsed_ms = elapsed_ms(start);
        report.push(entry);
    }
    report.finish();
    Ok(report)
}

/// Writes `report.json` and the CSV series files into `dir`.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(report).map_err(std::io::Error::from)?;
    std::fs::write(dir.join("report.json"), json)?;

    let mut w = csv::Writer::from_path(dir.join("accuracy_series.csv"))?;
    w.write_record(["index", "question_id", "accuracy"])?;
    for (i, value) in report.accuracy_series.iter().enumerate() {
        w.write_record([(i + 1).to_string(), report.order[i].clone(), value.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("kg_size_series.csv"))?;
    w.write_record(["index", "question_id", "triple_count"])?;
    for (i, size) in report.kg_size_series.iter().enumerate() {
        w.write_record([(i + 1).to_string(), report.order[i].clone(), size.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("depth_histogram.csv"))?;
    w.write_record(["depth", "count"])?;
    for bin in &report.depth_histogram {
        w.write_record([bin.depth.to_string(), bin.count.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["question_id", "elapsed_ms"])?;
    for e in &report.entries {
        w.write_record([e.question_id.clone(), format!("{:.3}", e.elapsed_ms)])?;
    }
    w.flush()?;
    Ok(())
}
