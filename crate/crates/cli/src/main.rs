use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lingmark::formulation::Strategy;
use lingmark::markers::MarkerKind;
use lingmark::stats::Behaviour;

mod analysis;
mod error;
mod experiment;
mod layout;
mod pipeline;
mod prepare;
mod report;

use error::CliError;
use layout::Layout;
use pipeline::Backend;

#[derive(Parser)]
#[command(
    name = "lingmark",
    version,
    about = "Language-disorder classification and longitudinal speech markers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataDir {
    /// Directory holding every artifact of the pipeline.
    #[arg(long, default_value = "lingmark-data")]
    data: PathBuf,
}

#[derive(Args)]
struct RunSpec {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, value_enum, default_value = "tiny")]
    backend: Backend,
    /// Saved encoder checkpoint for `--backend pretrained`.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// TOML training config; defaults depend on the backend.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic longitudinal corpus as CHAT files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse a CHAT corpus into records, a split manifest and class counts.
    Prepare {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        data: DataDir,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fine-tune one strategy and save a checkpoint per repeat.
    Train {
        #[command(flatten)]
        data: DataDir,
        #[command(flatten)]
        run: RunSpec,
        #[arg(long)]
        repeats: Option<usize>,
        /// Pick hyper-parameters by seeded grid search first.
        #[arg(long)]
        search: bool,
    },
    /// Score a trained run on the test split and store it in the registry.
    Evaluate {
        #[command(flatten)]
        data: DataDir,
        #[command(flatten)]
        run: RunSpec,
    },
    /// Compute a session-level marker for every session.
    Markers {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, value_parser = parse_marker)]
        marker: MarkerKind,
        /// Strategy whose latest run produces the marker, or `best` for the
        /// highest macro F1 in the registry.
        #[arg(long, default_value = "best")]
        strategy: String,
        /// Precomputed JSONL scores for the incoherence or word-fluency marker.
        #[arg(long)]
        scorer_file: Option<PathBuf>,
    },
    /// Cohort tests and behaviour association for a computed marker.
    Longitudinal {
        #[command(flatten)]
        data: DataDir,
        #[arg(long, value_parser = parse_marker)]
        marker: MarkerKind,
        #[arg(long, value_parser = parse_behaviour, default_value = "mmse")]
        behaviour: Behaviour,
    },
    /// Combine every available artifact into report.md.
    Report {
        #[command(flatten)]
        data: DataDir,
    },
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
        .map_err(|e: lingmark::label::ParseEnumError| e.to_string())
}

fn parse_marker(s: &str) -> Result<MarkerKind, String> {
    s.parse()
        .map_err(|e: lingmark::label::ParseEnumError| e.to_string())
}

fn parse_behaviour(s: &str) -> Result<Behaviour, String> {
    s.parse()
        .map_err(|e: lingmark::label::ParseEnumError| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, seed } => {
            prepare::synth(&out, seed)?;
        }
        Command::Prepare { corpus, data, seed } => {
            prepare::prepare(&corpus, &Layout::new(data.data), seed)?;
        }
        Command::Train {
            data,
            run,
            repeats,
            search,
        } => {
            let args = experiment::TrainArgs {
                strategy: run.strategy,
                backend: run.backend,
                encoder: run.encoder.as_deref(),
                config: run.config.as_deref(),
                seed: run.seed,
                repeats,
                search,
            };
            experiment::train(&Layout::new(data.data), &args)?;
        }
        Command::Evaluate { data, run } => {
            let seed = match run.seed {
                Some(s) => s,
                None => experiment::load_config(run.config.as_deref(), run.backend)?.seed,
            };
            let id = pipeline::run_id(run.strategy, run.backend, seed);
            let producer = format!(
                "lingmark train --strategy {} --backend {} --seed {seed}",
                run.strategy, run.backend
            );
            experiment::evaluate_run(&Layout::new(data.data), &id, &producer)?;
        }
        Command::Markers {
            data,
            marker,
            strategy,
            scorer_file,
        } => {
            analysis::markers(
                &Layout::new(data.data),
                marker,
                &strategy,
                scorer_file.as_deref(),
            )?;
        }
        Command::Longitudinal {
            data,
            marker,
            behaviour,
        } => {
            analysis::longitudinal(&Layout::new(data.data), marker, behaviour)?;
        }
        Command::Report { data } => {
            let layout = Layout::new(data.data);
            report::report(&layout)?;
            println!("report written to {}", layout.report().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
