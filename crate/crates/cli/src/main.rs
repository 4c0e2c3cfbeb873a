use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use votecast::config::PipelineConfig;
use votecast::gateway::mock::SimulatedAnnotator;
use votecast::pipeline::{Pipeline, PipelineError};
use votecast::prompt_kit::ChatFamily;

#[derive(Parser)]
#[command(name = "votecast", version, about = "Forecast vote shares from LLM-annotated election posts")]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "votecast.toml")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the built-in deterministic annotator instead of the HTTP endpoint.
    #[arg(long, global = true)]
    mock: bool,
    /// More log output (-v info, -vv debug). `RUST_LOG` takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Llama2,
    Zephyr,
}

impl From<Family> for ChatFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Llama2 => ChatFamily::Llama2Chat,
            Family::Zephyr => ChatFamily::ZephyrChat,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, deduplicate and query-filter the corpus.
    Ingest,
    /// Send every post to the completion backend (resumable).
    Annotate {
        #[arg(long, value_enum)]
        family: Option<Family>,
    },
    /// Recover mentions from raw outputs and canonicalize them.
    Extract {
        #[arg(long, value_enum)]
        family: Option<Family>,
    },
    /// Per-method and ensemble vote shares.
    Aggregate {
        #[arg(long, value_enum)]
        family: Option<Family>,
    },
    /// Pollster and consensus shares from the poll file.
    Polls,
    /// Deviation reports and winner calls against actual results.
    Compare,
    /// Every stage in order.
    RunAll,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Annotate { .. } => "annotate",
            Command::Extract { .. } => "extract",
            Command::Aggregate { .. } => "aggregate",
            Command::Polls => "polls",
            Command::Compare => "compare",
            Command::RunAll => "run-all",
        }
    }
}

fn families(p: &Pipeline, f: Option<Family>) -> Result<Vec<ChatFamily>, PipelineError> {
    match f {
        Some(f) => Ok(vec![f.into()]),
        None => Ok(p.config().families()?),
    }
}

fn print_file(p: &Pipeline, rel: &str) {
    if let Ok(s) = std::fs::read_to_string(p.run_dir().join(rel)) {
        print!("{s}");
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        let cwd = std::env::current_dir().unwrap_or_default();
        config.output.dir = cwd.join(out);
    }
    let mut pipeline = Pipeline::new(config)?;
    if cli.mock {
        pipeline = pipeline.with_backend(Arc::new(SimulatedAnnotator), true);
    }
    let p = &pipeline;
    match &cli.command {
        Command::Ingest => {
            p.cmd_ingest()?;
            print_file(p, "corpus/summary.txt");
        }
        Command::Annotate { family } => {
            for fam in families(p, *family)? {
                let s = p.cmd_annotate(fam)?;
                println!(
                    "{fam}: {} records, {} from checkpoint, {} sent, {} ok, {} failed",
                    s.total, s.from_checkpoint, s.sent, s.ok, s.failed
                );
            }
        }
        Command::Extract { family } => {
            for fam in families(p, *family)? {
                p.cmd_extract(fam)?;
                print_file(p, &format!("extract/{}/summary.txt", fam.short_name()));
            }
        }
        Command::Aggregate { family } => {
            for fam in families(p, *family)? {
                p.cmd_aggregate(fam)?;
                println!("[{fam}]");
                print_file(p, &format!("aggregate/{}/summary.txt", fam.short_name()));
            }
        }
        Command::Polls => {
            p.cmd_polls()?;
            print_file(p, "polls/summary.txt");
        }
        Command::Compare => {
            p.cmd_compare()?;
            print_file(p, "compare/summary.txt");
        }
        Command::RunAll => {
            let s = p.cmd_run_all()?;
            if s.compare.is_some() {
                print_file(p, "compare/summary.txt");
            }
        }
    }
    p.write_manifest(cli.command.name())?;
    println!("outputs: {}", p.run_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("votecast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
