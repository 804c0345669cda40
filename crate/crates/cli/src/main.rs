//! `fsbio`: synthesise benchmarks, run the baseline detectors and score
//! predictions from the command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.

mod commands;
mod config;
mod data;

use std::fmt;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsbio::pipeline::Detector;
use fsbio::proto_detector::Embedder;
use fsbio::scoring::Averaging;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Internal,
            message: message.into(),
        }
    }

    pub fn context(self, what: &str) -> Self {
        CliError {
            message: format!("{what}: {}", self.message),
            ..self
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<fsbio::Error> for CliError {
    fn from(e: fsbio::Error) -> Self {
        match e {
            fsbio::Error::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fsbio",
    version,
    about = "Few-shot bioacoustic event detection toolkit"
)]
struct Cli {
    /// TOML file with run defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-file detection [default: available parallelism].
    #[arg(long, global = true)]
    jobs: Option<NonZeroUsize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Support shots per episode.
    #[arg(long)]
    k_shot: Option<usize>,
    /// Processing sample rate in Hz.
    #[arg(long)]
    sample_rate: Option<u32>,
    /// STFT window in samples.
    #[arg(long)]
    win: Option<usize>,
    /// STFT hop in samples.
    #[arg(long)]
    hop: Option<usize>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Directory of WAV files with sibling annotation CSVs.
    #[arg(long)]
    input: PathBuf,
    /// Directory for prediction CSVs and the run log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic benchmark.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        files: Option<usize>,
        #[arg(long)]
        snr_db: Option<f64>,
        /// Distractor events per file.
        #[arg(long)]
        distractors: Option<usize>,
    },
    /// Spectrogram cross-correlation detector.
    DetectTemplate(DetectArgs),
    /// Prototype-distance detector.
    DetectProto {
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long)]
        embedder: Option<Embedder>,
        #[arg(long)]
        neg_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score prediction CSVs against ground truth.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Structured report path [default: <predictions>/report.json].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run name recorded in the report [default: predictions directory name].
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        iou_min: Option<f64>,
        #[arg(long, value_parser = parse_averaging)]
        averaging: Option<Averaging>,
        #[arg(long)]
        k_shot: Option<usize>,
    },
    /// Leaderboard over structured reports, best first.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "summed-counts" => Ok(Averaging::SummedCounts),
        "class-macro" => Ok(Averaging::ClassMacro),
        _ => Err(format!(
            "unknown averaging {s:?}; expected summed-counts or class-macro"
        )),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.few_shot.k_shot, self.k_shot);
        set(&mut cfg.frontend.target_sr, self.sample_rate);
        set(&mut cfg.frontend.win_samples, self.win);
        set(&mut cfg.frontend.hop_samples, self.hop);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .or_else(|| std::thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get);
    match cli.command {
        Command::Synth {
            out,
            seed,
            files,
            snr_db,
            distractors,
        } => {
            set(&mut cfg.synth.seed, seed);
            set(&mut cfg.synth.files_per_dataset, files);
            set(&mut cfg.synth.snr_db, snr_db);
            set(&mut cfg.synth.distractors, distractors);
            commands::synth(&cfg, &out)
        }
        Command::DetectTemplate(args) => {
            args.common.apply(&mut cfg);
            set(&mut cfg.template.threshold, args.threshold);
            commands::detect(
                &cfg,
                Detector::Template(cfg.template),
                &args.input,
                &args.out,
                jobs,
            )
        }
        Command::DetectProto {
            detect,
            embedder,
            neg_samples,
            seed,
        } => {
            detect.common.apply(&mut cfg);
            set(&mut cfg.proto.threshold, detect.threshold);
            set(&mut cfg.proto.embedder, embedder);
            set(&mut cfg.proto.neg_samples, neg_samples);
            set(&mut cfg.proto.rng_seed, seed);
            commands::detect(
                &cfg,
                Detector::Proto(cfg.proto),
                &detect.input,
                &detect.out,
                jobs,
            )
        }
        Command::Score {
            predictions,
            ground_truth,
            out,
            name,
            iou_min,
            averaging,
            k_shot,
        } => {
            set(&mut cfg.matching.iou_min, iou_min);
            set(&mut cfg.matching.averaging, averaging);
            set(&mut cfg.few_shot.k_shot, k_shot);
            let out = out.unwrap_or_else(|| predictions.join("report.json"));
            commands::score(&cfg, &predictions, &ground_truth, &out, name)
        }
        Command::Report { reports, out } => commands::report(&reports, out.as_deref()),
        Command::Config => {
            cfg.validate()?;
            println!("# fingerprint {}", cfg.fingerprint()?);
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
