use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use pscan_cli::commands::{self, EvalArgs, InferArgs, PathsArgs, PrepareArgs, TrainArgs};
use pscan_cli::config::{self, RunConfig, DEFAULT_COVERAGES, DEFAULT_SPLIT};
use pscan_core::scanpath::GridOptions;
use pscan_core::PathKind;

#[derive(Parser)]
#[command(name = "pscan", version, about = "Partial-scan STEM completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn list(s: &str) -> Result<Vec<f64>, String> {
    config::parse_list("list", s).map_err(|e| e.to_string())
}

fn ratios(s: &str) -> Result<[f64; 3], String> {
    list(s)?.try_into().map_err(|_| "expected three comma-separated ratios".to_string())
}

fn switch(s: &str) -> Result<bool, String> {
    config::parse_bool("switch", s).map_err(|e| e.to_string())
}

fn kind(s: &str) -> Result<PathKind, String> {
    s.parse().map_err(|e: pscan_core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scan-path mask, its traversal and a coverage report.
    Paths {
        #[arg(long, value_parser = kind, default_value = "spiral")]
        kind: PathKind,
        #[arg(long, default_value_t = 512)]
        side: usize,
        #[arg(long, default_value_t = 0.05)]
        coverage: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also blur the mask into graded dwell weights.
        #[arg(long)]
        blurred: bool,
        #[arg(long, default_value_t = 16)]
        grid_segment: usize,
        #[arg(long, default_value_t = 0.25)]
        grid_jitter: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build train/validation/test directories from images or the synthetic generator.
    Prepare {
        /// Directory of .tif/.tiff/.f32 micrographs to split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of synthetic micrographs to generate instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Side of synthetic micrographs.
        #[arg(long, default_value_t = 256)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = ratios, default_value = "0.75,0.1,0.15")]
        ratios: [f64; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes config.txt, loss.csv, checkpoints and summary.txt.
    Train {
        /// key = value config file; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set iterations=200.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Adversarial second phase (on/off).
        #[arg(long, value_parser = switch)]
        phase2: Option<bool>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Coverage sweep with RMS histograms, per-pixel MSE maps and baselines.
    Eval {
        /// Trained model; without it only the baselines are scored.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Crop side when no checkpoint fixes it.
        #[arg(long, default_value_t = config::DEFAULT_SIDE)]
        side: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.01")]
        coverages: Vec<f64>,
        #[arg(long, value_parser = kind, default_value = "spiral")]
        kind: PathKind,
        #[arg(long)]
        blurred: bool,
        /// Skip the nearest-neighbour and Laplace baselines.
        #[arg(long)]
        no_baselines: bool,
        /// Score only the first N test crops.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete one partial scan.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scan values (.tif/.f32); only pixels on the mask are used.
        #[arg(long)]
        scan: PathBuf,
        /// Binary .pgm or weighted .f32/.tif mask.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    pscan_cli::init_threads()?;
    match cli.command {
        Command::Paths { kind, side, coverage, seed, blurred, grid_segment, grid_jitter, out } => commands::paths(&PathsArgs {
            kind,
            side,
            coverage,
            seed,
            blurred,
            grid: GridOptions { segment_len: grid_segment, jitter: grid_jitter },
            out,
        }),
        Command::Prepare { data, synthetic, side, seed, ratios, out } => {
            debug_assert_eq!(DEFAULT_SPLIT.len(), ratios.len());
            commands::prepare(&PrepareArgs { data, synthetic, side, seed, ratios, out })
        }
        Command::Train { config, overrides, data, out, seed, phase2, resume } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            for pair in &overrides {
                cfg.set_pair(pair)?;
            }
            if let Some(d) = data {
                cfg.data = Some(d);
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(p) = phase2 {
                cfg.train.phase2 = p;
            }
            commands::train(&TrainArgs { config: cfg, resume })
        }
        Command::Eval { checkpoint, data, side, coverages, kind, blurred, no_baselines, limit, seed, out } => {
            debug_assert!(!DEFAULT_COVERAGES.is_empty());
            commands::eval(&EvalArgs { checkpoint, data, side, coverages, kind, blurred, baselines: !no_baselines, limit, seed, out })
        }
        Command::Infer { checkpoint, scan, mask, out } => commands::infer(&InferArgs { checkpoint, scan, mask, out }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(pscan_cli::exit_code(&e) as u8)
        }
    }
}
