//! `eegbench`: config-driven runner for synthesis, preprocessing, training
//! and the robustness protocols. Every run writes `results.json`, the tables
//! and curves derived from it, and `logs/` with its determinism metadata.

mod commands;
mod config;
mod error;
mod results;
mod tables;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::Dataset;
use config::ExperimentConfig;
use error::{CliError, CliResult};
use results::{write_atomic, write_json, Results, RESULTS_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "eegbench",
    version,
    about = "EEG sequence-model benchmark runner"
)]
struct Cli {
    /// JSON experiment config; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; for `synth` this is the dataset directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory (overrides `data_dir` in the config).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Size of the worker pool that runs folds and seeds.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Condition and window a dataset into train/val/test segment files.
    Prep,
    /// Train each configured model for every seed and score the test split.
    Train,
    /// Test accuracy as a function of window length.
    Segcurve,
    /// Leave-one-subject-out evaluation.
    Loso,
    /// Zero-shot evaluation at lower sampling rates.
    Crossfreq,
    /// Predictions on tasks never seen in training.
    Crosstask,
    /// Merge stored runs and rebuild every table from their predictions.
    Report {
        /// Run directories or results.json files.
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Synth => "synth",
            Self::Prep => "prep",
            Self::Train => "train",
            Self::Segcurve => "segcurve",
            Self::Loso => "loso",
            Self::Crossfreq => "crossfreq",
            Self::Crosstask => "crosstask",
            Self::Report { .. } => "report",
        }
    }
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    /// Tree id over the dataset files, each hashed as a git-style blob.
    input_hash: Option<&'a str>,
    input_files: &'a [(String, String)],
    workers: usize,
    jobs: Vec<String>,
}

fn effective_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.data {
        cfg.data_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(out: &Path, results: &Results, data: Option<&Dataset>, workers: usize) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    for (rel, text) in tables::render(results)? {
        write_atomic(&out.join(rel), text.as_bytes())?;
    }
    if let Some(cfg) = &results.config {
        write_json(&out.join("logs").join("config.json"), cfg)?;
    }
    let jobs = match std::fs::read_dir(out.join("jobs")) {
        Ok(dir) => {
            let mut names: Vec<String> = dir
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".json"))
                .collect();
            names.sort();
            names
        }
        Err(_) => Vec::new(),
    };
    let meta = RunMeta {
        command: &results.command,
        version: &results.version,
        seed: results.seed,
        config_hash: &results.config_hash,
        input_hash: results.input_hash.as_deref(),
        input_files: data.map_or(&[], |d| d.files.as_slice()),
        workers,
        jobs,
    };
    write_json(&out.join("logs").join("run.json"), &meta)?;
    // written last: its presence marks a complete run
    write_json(&out.join(RESULTS_FILE), results)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = effective_config(cli)?;
    if cli.print_config {
        let text = serde_json::to_string_pretty(&cfg)?;
        // a closed pipe (`| head`) is not an error
        return match writeln!(std::io::stdout(), "{text}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            other => Ok(other?),
        };
    }
    let command = cli
        .command
        .clone()
        .ok_or_else(|| CliError::Config("no subcommand given; see --help".into()))?;
    let workers = cli.workers.unwrap_or_else(rayon::current_num_threads);
    if workers == 0 {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;

    let default_out = || PathBuf::from("runs").join(command.name());
    pool.install(|| match &command {
        Command::Synth => {
            let dir = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
            let mut results = commands::synth(&cfg, &dir)?;
            let data = commands::load_dataset_hash(&dir)?;
            results.input_hash = Some(data.1.clone());
            write_dataset_meta(&dir, &results, &data.0, workers)
        }
        Command::Report { inputs } => {
            let out = cli.out.clone().unwrap_or_else(default_out);
            let results = commands::report(&cfg, inputs)?;
            finish(&out, &results, None, workers)
        }
        cmd => {
            let out = cli.out.clone().unwrap_or_else(default_out);
            let keep_ood = matches!(cmd, Command::Prep | Command::Crosstask);
            let data = commands::load_dataset(&cfg.data_dir, &cfg, |e| {
                keep_ood || commands::in_distribution(e)
            })?;
            let mut results = match cmd {
                Command::Prep => commands::prep(&cfg, &data, &out),
                Command::Train => commands::train(&cfg, &data, &out),
                Command::Segcurve => commands::segcurve(&cfg, &data, &out),
                Command::Loso => commands::loso_cmd(&cfg, &data, &out),
                Command::Crossfreq => commands::crossfreq(&cfg, &data, &out),
                Command::Crosstask => commands::crosstask(&cfg, &data, &out),
                Command::Synth | Command::Report { .. } => unreachable!(),
            }?;
            results.input_hash = Some(data.hash.clone());
            finish(&out, &results, Some(&data), workers)
        }
    })
}

/// `synth` writes its metadata next to the recordings.
fn write_dataset_meta(
    dir: &Path,
    results: &Results,
    files: &[(String, String)],
    workers: usize,
) -> CliResult<()> {
    let meta = RunMeta {
        command: &results.command,
        version: &results.version,
        seed: results.seed,
        config_hash: &results.config_hash,
        input_hash: results.input_hash.as_deref(),
        input_files: files,
        workers,
        jobs: Vec::new(),
    };
    write_json(&dir.join("logs").join("run.json"), &meta)?;
    if let Some(cfg) = &results.config {
        write_json(&dir.join("logs").join("config.json"), cfg)?;
    }
    write_json(&dir.join(RESULTS_FILE), results)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
