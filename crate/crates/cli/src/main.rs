//! `cinemap`: synthetic data, training, attribution, cross-modal mapping and
//! cohort evaluation from the command line.
//!
//! Exit status is 0 on success, 1 on a hard error and 2 when a pool run
//! finished with per-cell failures (listed on stderr).

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "cinemap",
    version,
    about = "Cross-modal attribution for 12-lead ECG and spatial trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Ecg,
    Cine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ig,
    Gradshap,
    Kernelshap,
    Lime,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrepArg {
    Positive,
    Absolute,
    Scaled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Md,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort with known ground-truth windows.
    Generate {
        #[arg(long, default_value_t = 50)]
        n_normal: usize,
        #[arg(long, default_value_t = 50)]
        n_abnormal: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator settings (JSON); omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the matching expert-style annotations.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Train a classifier and print its report as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        /// Model, optimizer and split settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Attribute every case of a dataset with one method.
    Attribute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Method parameters (JSON file or inline object).
        #[arg(long)]
        params: Option<String>,
        /// Reference cases for baseline-driven methods; defaults to `--data`.
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map 12-lead attributions onto the trajectory time axis.
    Map {
        #[arg(long)]
        attributions: PathBuf,
        /// JSON object from case id to diagnosis.
        #[arg(long)]
        diagnoses: PathBuf,
        #[arg(long, value_enum)]
        prep: PrepArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every configured cell against the expert masks.
    Pool {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results table with bootstrap intervals.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: FormatArg,
        #[arg(long, default_value_t = cinemap::harness::DEFAULT_BOOTSTRAP_B)]
        bootstrap_b: usize,
        #[arg(long, default_value_t = cinemap::harness::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one case as a document for the review UI.
    ExportUi {
        #[arg(long)]
        case: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        blind: bool,
        /// 12-lead checkpoint for overlays and the model prediction.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cine_checkpoint: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ig")]
        method: MethodArg,
        #[arg(long)]
        params: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate and rasterize annotation JSON.
    ImportAnnotations {
        #[arg(long = "in")]
        input: PathBuf,
        /// Per-case sampling rates; otherwise `--sample-rate` applies.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = cinemap::signal::DEFAULT_SAMPLE_RATE_HZ)]
        sample_rate: u32,
        #[arg(long, default_value_t = cinemap::signal::DEFAULT_WINDOW_MS)]
        window_ms: f64,
        /// Write the rasterized annotations as a JSON array.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate {
            n_normal,
            n_abnormal,
            seed,
            config,
            out,
            annotations,
        } => commands::generate(
            n_normal,
            n_abnormal,
            seed,
            config.as_deref(),
            &out,
            annotations.as_deref(),
        ),
        Command::Train {
            data,
            modality,
            config,
            seed,
            out_checkpoint,
        } => commands::train(&data, modality, config.as_deref(), seed, &out_checkpoint),
        Command::Attribute {
            checkpoint,
            data,
            method,
            params,
            baselines,
            seed,
            out,
        } => commands::attribute_cmd(
            &checkpoint,
            &data,
            method,
            params.as_deref(),
            baselines.as_deref(),
            seed,
            &out,
        ),
        Command::Map {
            attributions,
            diagnoses,
            prep,
            out,
        } => commands::map(&attributions, &diagnoses, prep, &out),
        Command::Pool { config, out } => commands::pool(&config, &out),
        Command::Report {
            results,
            format,
            bootstrap_b,
            alpha,
            seed,
            out,
        } => commands::report(&results, format, bootstrap_b, alpha, seed, out.as_deref()),
        Command::ExportUi {
            case,
            data,
            blind,
            checkpoint,
            cine_checkpoint,
            annotations,
            method,
            params,
            seed,
            out,
        } => commands::export_ui(commands::ExportArgs {
            case: &case,
            data: &data,
            blind,
            checkpoint: checkpoint.as_deref(),
            cine_checkpoint: cine_checkpoint.as_deref(),
            annotations: annotations.as_deref(),
            method,
            params: params.as_deref(),
            seed,
            out: &out,
        }),
        Command::ImportAnnotations {
            input,
            data,
            sample_rate,
            window_ms,
            out,
        } => commands::import_annotations(&input, data.as_deref(), sample_rate, window_ms, out.as_deref()),
    };
    match outcome {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
