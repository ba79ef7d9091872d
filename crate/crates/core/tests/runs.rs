mod common;

use std::io::Write;

use common::*;
use wts_core::eval::{
    load_dataset, run_apprenticeship, run_baseline, run_mastership, DatasetRecord, GoldFeedback,
    RunMode, ScriptedFeedback, Source,
};
use wts_core::evolution::EvolutionRecord;
use wts_core::llm::PromptKind;
use wts_core::{
    AuditLog, DatasetKind, DkgStore, Engine, HashEmbedder, MockLlm, Mode, PipelineConfig,
    PromptSet, Question, SharedStore, Verdict,
};

fn mcq(id: &str, text: &str, gold: usize) -> DatasetRecord {
    DatasetRecord {
        question: Question::new(
            id,
            text,
            Some(vec!["fever".into(), "anemia".into(), "scurvy".into()]),
            Some(wts_core::Answer::Option(gold)),
            DatasetKind::MultipleChoice,
        )
        .unwrap(),
        source: Source::Medmcqa,
    }
}

fn seed_store() -> SharedStore {
    let mut s = DkgStore::new();
    s.add_triple(t("aspirin", "treats", "fever"));
    s.add_triple(t("iron deficiency", "causes", "anemia"));
    SharedStore::new(s)
}

#[test]
fn apprenticeship_is_reproducible() {
    let prompts = PromptSet::default();
    let embedder = HashEmbedder::default();
    let config = PipelineConfig::default();
    let records = vec![
        mcq("1", "what does aspirin treat", 0),
        mcq("2", "what does iron deficiency cause", 1),
        mcq("3", "which vitamin deficiency causes scurvy", 2),
    ];
    let run = || {
        let mut llm = RuleLlm::new(vec!["aspirin".into(), "anemia".into()]);
        llm.generated = vec![t("vitamin c deficiency", "causes", "scurvy")];
        let engine = Engine::new(&config, &prompts, &embedder, &llm);
        let store = seed_store();
        let report = run_apprenticeship(&records, &engine, &store, None).unwrap();
        (report, store.snapshot().len())
    };
    let (a, size_a) = run();
    let (b, size_b) = run();
    assert_eq!(a.without_timings(), b.without_timings());
    assert_eq!(size_a, size_b);
    assert_eq!(a.mode, RunMode::Apprenticeship);
    assert_eq!(a.order, ["1", "2", "3"]);
    // the rule model always answers 0 and is never confident
    assert_eq!(a.totals.accuracy, Some(1.0 / 3.0));
    assert_eq!(a.depth_histogram.iter().map(|b| b.count).sum::<usize>(), 3);
    assert_eq!(a.depth_histogram.last().unwrap().count, 3);
    assert_eq!(size_a, 3);
    assert_eq!(a.totals.triples_added, 1);
}

#[test]
fn apprenticeship_needs_gold() {
    let prompts = PromptSet::default();
    let embedder = HashEmbedder::default();
    let config = PipelineConfig::default();
    let llm = RuleLlm::new(vec![]);
    let engine = Engine::new(&config, &prompts, &embedder, &llm);
    let records = vec![DatasetRecord { question: Question::open("x", "why"), source: Source::Custom }];
    assert!(run_apprenticeship(&records, &engine, &seed_store(), None).is_err());
}

#[test]
fn failed_questions_are_logged_and_excluded() {
    let prompts = PromptSet::default();
    let embedder = HashEmbedder::default();
    let config = PipelineConfig { max_hop: 1, max_depth: 2, ..PipelineConfig::default() };
    // one good question, then the script runs dry
    let llm = MockLlm::new()
        .with(PromptKind::Entity, r#"{"entities": ["aspirin"]}"#)
        .with(PromptKind::Reason, r#"{"confidence": "yes", "answer": 0, "support_info": ""}"#);
    let engine = Engine::new(&config, &prompts, &embedder, &llm);
    let records = vec![mcq("1", "what does aspirin treat", 0), mcq("2", "what else", 1)];
    let report = run_apprenticeship(&records, &engine, &seed_store(), None).unwrap();
    assert_eq!(report.totals.errored, 1);
    assert_eq!(report.totals.answered, 1);
    assert_eq!(report.totals.accuracy, Some(1.0));
    assert!(report.entries[1].error.is_some());
    assert_eq!(report.depth_histogram[0].count, 1);
}

#[test]
fn mastership_follows_feedback() {
    let prompts = PromptSet::default();
    let embedder = HashEmbedder::default();
    let config = PipelineConfig { mode: Mode::Mastership, ..PipelineConfig::default() };
    let mut llm = RuleLlm::new(vec!["aspirin".into()]);
    llm.confident = true;
    llm.generated = vec![t("aspirin", "reduces", "inflammation")];
    let engine = Engine::new(&config, &prompts, &embedder, &llm);
    let records = vec![mcq("1", "what does aspirin treat", 0), mcq("2", "and again", 1)];
    let dir = tempfile::tempdir().unwrap();
    let audit = AuditLog::open(dir.path().join("audit.jsonl")).unwrap();
    let store = seed_store();
    let mut feedback = ScriptedFeedback::new([Verdict::Positive, Verdict::Negative]);
    let report = run_mastership(&records, &engine, &store, &mut feedback, Some(&audit)).unwrap();
    let tally = report.verdicts.unwrap();
    assert_eq!((tally.positive, tally.negative, tally.none), (1, 1, 0));
    assert_eq!(report.totals.triples_added, 1);
    assert_eq!(store.snapshot().len(), 3);

    let lines: Vec<EvolutionRecord> = std::fs::read_to_string(audit.path())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].added.len(), 1);
    assert_eq!(lines[1].skipped_exact.len(), 1);

    // the generation prompt carries the answer only after positive feedback
    let mut gold_feedback = GoldFeedback;
    let apprentice = PipelineConfig::default();
    let engine = Engine::new(&apprentice, &prompts, &embedder, &llm);
    assert!(run_mastership(&records, &engine, &store, &mut gold_feedback, None).is_err());
}

#[test]
fn baseline_uses_no_graph() {
    let prompts = PromptSet::default();
    let embedder = HashEmbedder::default();
    let params = Default::default();
    let llm = MockLlm::new()
        .with(PromptKind::Direct, r#"{"answer": 0}"#)
        .with(PromptKind::Direct, r#"{"answer": "2"}"#);
    let gateway = wts_core::Gateway::new(&llm, &prompts, &params);
    let records = vec![mcq("1", "q one", 0), mcq("2", "q two", 1)];
    let report = run_baseline(&records, &gateway, &embedder).unwrap();
    assert_eq!(report.totals.accuracy, Some(0.5));
    assert!(report.depth_histogram.is_empty());
    assert_eq!(llm.calls().len(), 2);
}

#[test]
fn dataset_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mcq.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, r#"{{"id": 1, "question": "Q?", "options": ["a", "b"], "answer_index": 1}}"#).unwrap();
    writeln!(f).unwrap();
    writeln!(f, r#"{{"id": 2, "question": "Q2?", "options": ["a", "b"]}}"#).unwrap();
    drop(f);
    let recs = load_dataset(&path, Source::Sciq).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1].question.gold_answer, None);
    assert!(load_dataset(dir.path().join("missing.jsonl"), Source::Sciq).is_err());
}
