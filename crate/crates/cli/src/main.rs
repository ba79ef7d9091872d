use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wts_cli::config::parse_pair;
use wts_cli::{ingest, AppConfig, AppState, Runtime};
use wts_core::eval::{
    emit_report, load_dataset, run_apprenticeship, run_baseline, run_mastership, FeedbackSource,
    GoldFeedback, RunReport, ScriptedFeedback, Source,
};
use wts_core::{answer_question, DatasetKind, Mode, Question, Verdict};

#[derive(Parser)]
#[command(name = "wts", version, about = "Question answering over an evolving knowledge graph")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "WTS_CONFIG")]
    config: Option<PathBuf>,
    /// Triple store (JSONL).
    #[arg(long, global = true)]
    store: Option<String>,
    /// `mock` or `remote`.
    #[arg(long, global = true)]
    llm: Option<String>,
    /// Reply script for the mock model.
    #[arg(long, global = true)]
    mock_script: Option<String>,
    /// `hash` or `remote`.
    #[arg(long, global = true)]
    embedder: Option<String>,
    #[arg(long, global = true)]
    audit_log: Option<String>,
    /// Any config key, e.g. `--set max_depth=4`. Repeatable.
    #[arg(long = "set", global = true, value_parser = parse_pair)]
    sets: Vec<(String, String)>,
    /// Log filter, e.g. `info` or `wts_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
}

impl GlobalArgs {
    fn pairs(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (key, value) in [
            ("store_path", &self.store),
            ("llm", &self.llm),
            ("mock_script", &self.mock_script),
            ("embedder", &self.embedder),
            ("audit_log", &self.audit_log),
        ] {
            if let Some(v) = value {
                out.push((key, v.as_str()));
            }
        }
        out.extend(self.sets.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        out
    }

    fn resolve(&self, extra: &[(&str, &str)]) -> Result<AppConfig> {
        let mut pairs = self.pairs();
        pairs.extend_from_slice(extra);
        AppConfig::resolve(self.config.as_deref(), |k| std::env::var(k).ok(), pairs)
            .context("resolving configuration")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Add triples from a JSONL file of {"head","relation","tail"} objects.
    Ingest { file: PathBuf },
    /// Answer one question and print the result as JSON.
    Ask {
        question: String,
        /// Answer option; repeat for each.
        #[arg(long = "option", short = 'o')]
        options: Vec<String>,
    },
    /// Run a dataset and write report files.
    Run(RunArgs),
    /// Start the HTTP service.
    Serve {
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
        /// Directory of static console assets.
        #[arg(long)]
        static_dir: Option<String>,
    },
    /// Inspect the store.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
}

#[derive(Subcommand)]
enum KgCommand {
    /// Write the store as JSONL to stdout or a file.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print triple, entity and relation counts.
    Stats,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunKind {
    Apprenticeship,
    Mastership,
    Baseline,
}

#[derive(Args)]
struct RunArgs {
    /// JSONL dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// chatdoctor, pubmedqa, medmcqa, sciq, scienceqa, simpleqa or custom.
    #[arg(long, default_value = "custom")]
    source: String,
    #[arg(long, value_enum, default_value = "apprenticeship")]
    mode: RunKind,
    /// Mastership feedback: `gold` or a file with one good/bad/none per line.
    #[arg(long)]
    feedback: Option<String>,
    /// Report directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Only the first N records.
    #[arg(long)]
    limit: Option<usize>,
}

fn load_feedback(from: &str) -> Result<Box<dyn FeedbackSource>> {
    if from == "gold" {
        return Ok(Box::new(GoldFeedback));
    }
    let file = std::fs::File::open(from).with_context(|| format!("opening feedback script {from}"))?;
    let mut verdicts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let v = match line.trim().to_lowercase().as_str() {
            "" => continue,
            "good" | "positive" => Verdict::Positive,
            "bad" | "negative" => Verdict::Negative,
            "none" => Verdict::None,
            other => bail!("{from}:{}: unknown verdict {other:?}", i + 1),
        };
        verdicts.push(v);
    }
    Ok(Box::new(ScriptedFeedback::new(verdicts)))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn summarize(report: &RunReport) {
    let t = &report.totals;
    eprintln!(
        "{} questions, {} answered, {} errored; accuracy {}; kg {} -> {} triples",
        t.questions,
        t.answered,
        t.errored,
        t.accuracy.map_or("n/a".to_owned(), |a| format!("{a:.4}")),
        t.initial_kg_size,
        t.final_kg_size,
    );
}

fn run(global: &GlobalArgs, args: &RunArgs) -> Result<()> {
    let source = Source::parse(&args.source).with_context(|| format!("unknown source {:?}", args.source))?;
    let depth = source.default_depth().to_string();
    let mut extra: Vec<(&str, &str)> = Vec::new();
    if matches!(args.mode, RunKind::Mastership) {
        extra.push(("mode", "mastership"));
    }
    let mut config = global.resolve(&extra)?;
    // each source has its own reference depth unless one was chosen
    if !config.is_explicit("max_depth") {
        config.set("max_depth", &depth, wts_cli::Origin::Default)?;
        config.validate()?;
    }
    let rt = Runtime::from_config(config)?;
    let mut records = load_dataset(&args.dataset, source)?;
    if let Some(n) = args.limit {
        records.truncate(n);
    }
    let engine = rt.engine();
    let report = match args.mode {
        RunKind::Apprenticeship => run_apprenticeship(&records, &engine, &rt.store, rt.audit.as_ref())?,
        RunKind::Mastership => {
            let mut feedback = load_feedback(args.feedback.as_deref().unwrap_or("gold"))?;
            run_mastership(&records, &engine, &rt.store, feedback.as_mut(), rt.audit.as_ref())?
        }
        RunKind::Baseline => run_baseline(&records, &engine.gateway(), rt.embedder.as_ref())?,
    };
    if !matches!(args.mode, RunKind::Baseline) {
        rt.persist()?;
    }
    emit_report(&report, &args.out)?;
    summarize(&report);
    eprintln!("report written to {}", args.out.display());
    Ok(())
}

fn export(rt: &Runtime, out: Option<&Path>) -> Result<()> {
    let snapshot = rt.store.snapshot();
    match out {
        Some(path) => snapshot.save(path)?,
        None => {
            let stdout = std::io::stdout();
            snapshot.write_jsonl(&mut stdout.lock())?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.global.log))
        .with_writer(std::io::stderr)
        .init();

    match &cli.command {
        Command::Ingest { file } => {
            // ingest never talks to a model
            let config = cli.global.resolve(&[("llm", "remote"), ("embedder", "hash")])?;
            let rt = Runtime::with_clients(
                config,
                Box::new(wts_core::HashEmbedder::default()),
                Box::new(wts_core::MockLlm::new()),
            )?;
            let stats = ingest(&rt.store, file)?;
            rt.persist()?;
            print_json(&stats)
        }
        Command::Ask { question, options } => {
            let rt = Runtime::from_config(cli.global.resolve(&[])?)?;
            let options = (!options.is_empty()).then(|| options.clone());
            let kind = if options.is_some() { DatasetKind::MultipleChoice } else { DatasetKind::Generation };
            let q = Question::new("cli", question.as_str(), options, None, kind)?;
            let result = answer_question(&rt.engine(), &q, &rt.store.snapshot())?;
            print_json(&result)
        }
        Command::Run(args) => run(&cli.global, args),
        Command::Serve { bind, static_dir } => {
            let mut extra = Vec::new();
            if let Some(b) = bind {
                extra.push(("bind", b.as_str()));
            }
            if let Some(d) = static_dir {
                extra.push(("static_dir", d.as_str()));
            }
            let config = cli.global.resolve(&extra)?;
            if config.pipeline.mode != Mode::Mastership {
                tracing::warn!("serving in apprenticeship mode; feedback will not evolve the graph");
            }
            let addr: SocketAddr = config.bind.parse().with_context(|| format!("bad bind address {}", config.bind))?;
            let rt = Arc::new(Runtime::from_config(config)?);
            let state = AppState::new(rt)?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(wts_cli::service::serve(state, addr))?;
            Ok(())
        }
        Command::Kg { command } => {
            let config = cli.global.resolve(&[("llm", "remote")])?;
            let rt = Runtime::with_clients(
                config,
                Box::new(wts_core::HashEmbedder::default()),
                Box::new(wts_core::MockLlm::new()),
            )?;
            match command {
                KgCommand::Export { out } => export(&rt, out.as_deref()),
                KgCommand::Stats => print_json(&rt.store.snapshot().stats()),
            }
        }
    }
}
