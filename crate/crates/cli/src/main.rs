use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use engage_cli::pipeline::outcome_counts;
use engage_cli::{BackendKind, ClassifyTarget, Overrides, Pipeline, PipelineError};
use engage_core::backend::stub::{StubScript, StubServer};
use engage_core::backend::ModelHandle;
use engage_core::{ClassifierModel, MetricsReport, Task};

#[derive(Parser)]
#[command(
    name = "engage",
    version,
    about = "Mine engaging teacher messages from lesson transcripts"
)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, default_value = "engage.toml")]
    config: PathBuf,
    /// Overrides `dataset.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `backend.kind`.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// identification or frame.
    #[arg(long, global = true, default_value = "identification")]
    task: Task,
    /// Coder whose decisions `review` records.
    #[arg(long, global = true)]
    coder_id: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the lesson manifest and transcripts.
    Ingest,
    /// Segment sentences and keep keyword candidates.
    Filter,
    /// Assemble, split and export the task's dataset.
    BuildDataset,
    /// Train the baseline or run a remote fine-tuning job.
    Finetune,
    /// Classify the test split or the keyword candidates.
    Classify {
        #[arg(long, value_enum, default_value_t = ClassifyTarget::Test)]
        target: ClassifyTarget,
    },
    /// Review candidates interactively on stdin.
    Review {
        /// Candidates CSV; defaults to the filter stage output.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Score test predictions against the gold labels.
    Evaluate,
    /// Frame distribution report by grade and trimester.
    Report,
    /// Percent agreement between two coders.
    Agree {
        coder_a: String,
        coder_b: String,
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Merge two coders' decisions with consensus resolutions.
    Adjudicate {
        coder_a: String,
        coder_b: String,
        /// CSV `ref,label` with the agreed label for each disagreement.
        #[arg(long)]
        resolutions: PathBuf,
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Ingest through evaluation for every task with gold labels, then report.
    Run,
    /// Serve the remote contract locally for offline runs.
    StubServer {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
        /// Bearer token clients must present.
        #[arg(long)]
        api_key: Option<String>,
        /// Baseline `model.json` used to answer completions.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn print_metrics(task: Task, m: &MetricsReport) {
    let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.2}%", v * 100.0));
    println!(
        "{task}: sensitivity {} specificity {} precision {} f1 {} (n={}, unscored {})",
        pct(m.sensitivity),
        pct(m.specificity),
        pct(m.precision),
        m.f1.map_or("n/a".to_owned(), |v| format!("{v:.3}")),
        m.matrix.total(),
        m.unscored
    );
    for note in &m.notes {
        println!("  note: {note}");
    }
}

fn run_all(p: &Pipeline) -> Result<(), PipelineError> {
    p.ingest()?;
    p.filter()?;
    for task in [Task::Identification, Task::Frame] {
        if p.config.gold.for_task(task).is_none() {
            log::info!("no gold labels for {task}; skipping");
            continue;
        }
        p.build_dataset(task)?;
        p.finetune(task)?;
        p.classify(task, ClassifyTarget::Test)?;
        print_metrics(task, &p.evaluate(task)?);
    }
    if p.config.gold.frame.is_some() {
        p.report()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        backend: cli.backend,
    };
    let p = Pipeline::open(&cli.config, &overrides)?;
    let task = cli.task;
    match cli.command {
        Command::Ingest => {
            let s = p.ingest()?;
            println!("{} lessons, {} lines, {} sentences", s.lessons, s.lines, s.sentences);
        }
        Command::Filter => println!("{} candidates", p.filter()?),
        Command::BuildDataset => {
            let ds = p.build_dataset(task)?;
            println!("{} examples", ds.examples.len());
        }
        Command::Finetune => {
            let m = p.finetune(task)?;
            match m.handle {
                ModelHandle::Remote { model } => println!("fine-tuned model {model}"),
                ModelHandle::Baseline(_) => println!("baseline trained"),
            }
        }
        Command::Classify { target } => {
            let (labeled, parse, transport) = outcome_counts(&p.classify(task, target)?);
            println!("{labeled} labeled, {parse} parse errors, {transport} transport failures");
        }
        Command::Review { candidates } => {
            let coder_id = cli.coder_id.unwrap_or_default();
            let stdin = io::stdin().lock();
            let s = p.review(task, &coder_id, candidates.as_deref(), stdin, io::stdout().lock())?;
            println!(
                "{} decided, {} skipped, {} remaining",
                s.decided, s.skipped, s.remaining
            );
        }
        Command::Evaluate => print_metrics(task, &p.evaluate(task)?),
        Command::Report => {
            let r = p.report()?;
            println!("{} rows written to {}", r.rows().len(), p.path("report").display());
        }
        Command::Agree {
            coder_a,
            coder_b,
            candidates,
        } => {
            let r = p.agree(task, &coder_a, &coder_b, candidates.as_deref())?;
            println!(
                "{} items, {} disagreements, agreement {}%",
                r.items,
                r.disagreements.len(),
                r.percent.map_or("n/a".to_owned(), |v| format!("{v:.2}"))
            );
        }
        Command::Adjudicate {
            coder_a,
            coder_b,
            resolutions,
            candidates,
        } => {
            let out = p.adjudicate(task, &coder_a, &coder_b, &resolutions, candidates.as_deref())?;
            println!("gold labels written to {}", out.display());
        }
        Command::Run => run_all(&p)?,
        Command::StubServer { .. } => unreachable!("handled before config load"),
    }
    Ok(())
}

fn stub_server(addr: &str, api_key: Option<String>, model: Option<PathBuf>) -> anyhow::Result<()> {
    let mut script = StubScript::default();
    if let Some(key) = api_key {
        script = script.with_api_key(key);
    }
    if let Some(path) = model {
        let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let m: ClassifierModel =
            serde_json::from_reader(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        let ModelHandle::Baseline(baseline) = m.handle else {
            anyhow::bail!("{} is not a baseline model", path.display());
        };
        script = script.with_baseline(baseline);
    }
    let server = StubServer::start(addr, script)?;
    println!("stub listening on {}", server.endpoint());
    server.wait();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::StubServer { addr, api_key, model } = cli.command {
        return match stub_server(&addr, api_key, model) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        };
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
