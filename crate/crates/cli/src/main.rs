//! `pairminer` command-line interface.
//!
//! Exit codes: 0 success, 1 config error, 2 stage failure, 3
//! reconciliation mismatch.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pairminer::corpus::{filter_documents, load_catalog, retrieve_candidates, DocumentMeta};
use pairminer::extract::QualityRules;
use pairminer::fixtures::{generate, FixtureError, FixtureSpec};
use pairminer::jsonl::{read_jsonl, to_jsonl};
use pairminer::pipeline::{funnel_report, resume, Config, LoadedConfig, Pipeline, PipelineError, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "pairminer", version, about = "Mine verified problem-solution pairs from textbook corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every pending stage of the run the config describes.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop once this stage is done.
        #[arg(long)]
        stop_after: Option<Stage>,
        /// Re-run from this stage, accepting a changed config.
        #[arg(long)]
        force_from: Option<Stage>,
    },
    /// Continue a run from its first unfinished stage.
    Resume {
        #[command(flatten)]
        run: RunRef,
        #[arg(long)]
        force_from: Option<Stage>,
    },
    /// Recount stage outputs and print the funnel.
    Report {
        #[command(flatten)]
        run: RunRef,
        #[arg(long)]
        json: bool,
    },
    /// Keyword retrieval over a catalog.
    Retrieve {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "problem,question")]
        keywords: Vec<String>,
        #[command(flatten)]
        out: Out,
    },
    /// LLM relevance filter over DocumentMeta lines.
    FilterDocs {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    Render(StageArgs),
    Transcribe(StageArgs),
    Segment {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    Extract(StageArgs),
    FilterItems {
        #[command(flatten)]
        stage: StageArgs,
        /// Pattern file replacing the configured one.
        #[arg(long)]
        patterns: Option<PathBuf>,
    },
    Match {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long)]
        k_semantic: Option<usize>,
        #[arg(long)]
        candidate_limit: Option<usize>,
    },
    Collect {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    Judge(StageArgs),
    /// Generate a synthetic fixture corpus with its mock script.
    Fixtures {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunRef {
    /// Run id, or a run directory.
    #[arg(long = "run")]
    id: String,
    #[arg(long, default_value = "work")]
    work_dir: PathBuf,
}

impl RunRef {
    fn dir(&self) -> PathBuf {
        let direct = PathBuf::from(&self.id);
        if direct.join(pairminer::pipeline::MANIFEST_FILE).is_file() {
            direct
        } else {
            self.work_dir.join(&self.id)
        }
    }
}

#[derive(Args)]
struct Out {
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Out {
    fn write(&self, bytes: &[u8]) -> Result<()> {
        match &self.out {
            Some(p) => pairminer::jsonl::write_atomic(p, bytes).with_context(|| format!("writing {}", p.display())),
            None => say(bytes),
        }
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn say(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(bytes).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// One document id, or `all` to run the stage for the whole run.
    #[arg(long, default_value = "all")]
    doc: String,
    #[command(flatten)]
    out: Out,
}

fn load(path: &Path) -> Result<LoadedConfig, PipelineError> {
    Config::load(path)
}

/// Runs the stage in the run when nothing is overridden and all documents
/// are selected; otherwise computes it without touching the run and
/// prints its records.
fn stage_command(stage: Stage, args: &StageArgs, adjust: impl FnOnce(&mut Config) -> bool) -> Result<()> {
    let mut loaded = load(&args.config)?;
    let overridden = adjust(&mut loaded.config);
    loaded.config.validate()?;
    let pipeline = Pipeline::open(loaded)?;
    if args.doc == "all" && !overridden {
        let manifest = pipeline.run_stage(stage)?;
        let counts = manifest.record(stage).counts.clone().unwrap_or_default();
        eprintln!("{stage}: {} in, {} kept, dropped {:?}", counts.inputs, counts.kept, counts.dropped);
        if args.out.out.is_some() {
            let primary = pairminer::pipeline::stage_files(stage)[0];
            args.out.write(&std::fs::read(pairminer::pipeline::stage_path(pipeline.run_dir(), stage, primary))?)?;
        }
        Ok(())
    } else {
        let doc = (args.doc != "all").then_some(args.doc.as_str());
        args.out.write(&pipeline.preview(stage, doc)?)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, stop_after, force_from } => {
            let pipeline = Pipeline::open(load(&config)?)?;
            pipeline.run(&RunOptions { stop_after, force_from })?;
            let report = pipeline.report()?;
            say(format!("{report}dataset: {}\n", pipeline.dataset_path().display()).as_bytes())?;
        }
        Command::Resume { run, force_from } => {
            let (pipeline, _) = resume(&run.dir(), force_from)?;
            say(pipeline.report()?.to_string().as_bytes())?;
        }
        Command::Report { run, json } => {
            let report = funnel_report(&run.dir())?;
            let text = if json { serde_json::to_string_pretty(&report)? + "\n" } else { report.to_string() };
            say(text.as_bytes())?;
        }
        Command::Retrieve { catalog, keywords, out } => {
            let docs = load_catalog(&catalog).map_err(|e| PipelineError::Config(e.to_string()))?;
            let hits = retrieve_candidates(&docs, &keywords).map_err(|e| PipelineError::Config(e.to_string()))?;
            eprintln!("retrieved {} of {} documents", hits.len(), docs.len());
            out.write(&to_jsonl(&hits)?)?;
        }
        Command::FilterDocs { input, config, out } => {
            let pipeline = Pipeline::open(load(&config)?)?;
            let docs: Vec<DocumentMeta> = read_jsonl(&input).with_context(|| format!("reading {}", input.display()))?;
            let run = filter_documents(pipeline.gateway(), &pipeline.config().provider.models.filter, &docs);
            for q in &run.quarantined {
                eprintln!("quarantined {}: {}", q.subject, q.reason);
            }
            out.write(&to_jsonl(&run.decisions)?)?;
        }
        Command::Render(a) => stage_command(Stage::Render, &a, |_| false)?,
        Command::Transcribe(a) => stage_command(Stage::Transcribe, &a, |_| false)?,
        Command::Extract(a) => stage_command(Stage::Extract, &a, |_| false)?,
        Command::Judge(a) => stage_command(Stage::Judge, &a, |_| false)?,
        Command::Segment { stage, max_tokens } => stage_command(Stage::Segment, &stage, |c| {
            max_tokens.is_some_and(|n| std::mem::replace(&mut c.segment.max_tokens, n) != n)
        })?,
        Command::FilterItems { stage, patterns } => {
            if let Some(p) = &patterns {
                QualityRules::load(p).map_err(|e| PipelineError::Config(e.to_string()))?;
            }
            let patterns = patterns.map(|p| std::path::absolute(&p).unwrap_or(p));
            stage_command(Stage::FilterItems, &stage, |c| {
                patterns.is_some_and(|p| c.extract.patterns.replace(p.clone()) != Some(p))
            })?
        }
        Command::Match { stage, k_semantic, candidate_limit } => stage_command(Stage::Match, &stage, |c| {
            let mut changed = false;
            if let Some(k) = k_semantic {
                changed |= std::mem::replace(&mut c.matching.k_semantic, k) != k;
            }
            if let Some(n) = candidate_limit {
                changed |= std::mem::replace(&mut c.matching.candidate_limit, n) != n;
            }
            changed
        })?,
        Command::Collect { stage, models } => stage_command(Stage::Collect, &stage, |c| {
            models.is_some_and(|m| std::mem::replace(&mut c.respond.models, m.clone()) != m)
        })?,
        Command::Fixtures { spec, out } => {
            let spec = FixtureSpec::load(&spec)?;
            let fx = generate(&spec, &out)?;
            eprintln!(
                "{} documents, {} pages, {} planted pairs; config at {}",
                fx.summary.catalog_documents,
                fx.summary.pages,
                fx.summary.pairs,
                fx.config.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<PipelineError>() {
        return e.exit_code() as u8;
    }
    match err.downcast_ref::<FixtureError>() {
        Some(FixtureError::Invalid(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
