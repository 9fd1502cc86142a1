//! `riskguard` — synthetic world generation, many-trial experiment runs, and
//! single-shot calibration of each risk-control method on external data.
//!
//! Exit codes: 0 success / all declared assertions pass; 1 assertion failure
//! or infeasible selection; 2 configuration error; 3 I/O error.

mod commands;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable configuration, or failed validation.
    Config(String),
    /// Filesystem trouble.
    Io(String),
    /// A method returned no feasible answer.
    Infeasible,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Infeasible => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub fn io_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {err}"))
}

#[derive(Parser)]
#[command(
    name = "riskguard",
    about = "Distribution-free risk control: prediction sets, credal sets, and edge-cloud routing with certified guarantees",
    version
)]
struct Cli {
    /// Worker threads for parallel sections. Defaults to the processor
    /// count; the RISKGUARD_WORKERS environment variable overrides the
    /// default, and this flag overrides both.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic oracle world as newline-delimited records.
    Gen {
        /// World configuration file (JSON, tagged by "type").
        #[arg(long)]
        config: PathBuf,
        /// Number of examples to generate.
        #[arg(long)]
        count: usize,
        /// Override the world seed from the configuration file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path for the record stream.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a many-trial experiment and write trials plus a summary.
    Run {
        /// Experiment specification file (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Directory receiving trials.ndjson and summary.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Calibrate one method on an external record file and print the result.
    Calibrate {
        #[command(subcommand)]
        method: CalibrateMethod,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistChoice {
    /// Score against the edge distribution.
    Edge,
    /// Score against the cloud distribution.
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostChoice {
    Avg,
    Entropic,
    Cvar,
}

#[derive(Subcommand, Debug)]
pub enum CalibrateMethod {
    /// Split-conformal threshold from labeled records.
    Cp {
        #[arg(long)]
        data: PathBuf,
        /// Target miscoverage rate.
        #[arg(long)]
        alpha: f64,
        /// Which distribution the score is evaluated against.
        #[arg(long, value_enum, default_value_t = DistChoice::Edge)]
        dist: DistChoice,
    },
    /// Localized conformal threshold around a test point.
    Lcp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Gaussian kernel bandwidth.
        #[arg(long)]
        bandwidth: f64,
        /// Test-point features, comma separated.
        #[arg(long)]
        x: String,
        /// Seed of the perturbation draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistChoice::Edge)]
        dist: DistChoice,
    },
    /// OCE-RCPS hyperparameter selection (miscoverage loss on the records).
    OceRcps {
        #[arg(long)]
        data: PathBuf,
        /// Tolerated risk level.
        #[arg(long)]
        alpha: f64,
        /// Violation probability of the guarantee.
        #[arg(long)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = CostChoice::Avg)]
        cost: CostChoice,
        /// Sensitivity of the entropic or CVaR cost.
        #[arg(long)]
        zeta: Option<f64>,
        /// Fraction of records held out for optimizing t.
        #[arg(long, default_value_t = 0.2)]
        opt_frac: f64,
        /// Lambda grid step.
        #[arg(long, default_value_t = 0.001)]
        grid_step: f64,
        /// Seed of the optimization/calibration split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistChoice::Edge)]
        dist: DistChoice,
    },
    /// OCE-CRC hyperparameter selection.
    OceCrc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = CostChoice::Avg)]
        cost: CostChoice,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        opt_frac: f64,
        #[arg(long, default_value_t = 0.001)]
        grid_step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = DistChoice::Edge)]
        dist: DistChoice,
    },
    /// Conformalized credal radius from cloud/edge distribution pairs.
    Cdci {
        #[arg(long)]
        data: PathBuf,
        /// Target distribution-miscoverage rate.
        #[arg(long)]
        alpha_dist: f64,
        /// Order of the alpha-divergence (1 = KL).
        #[arg(long, default_value_t = 1.0)]
        alpha_order: f64,
    },
}

fn worker_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("RISKGUARD_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
    .max(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // The pool is process-global; ignore the error if a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cli.workers))
        .build_global();

    let result = match cli.command {
        Command::Gen {
            config,
            count,
            seed,
            out,
        } => commands::gen(&config, count, seed, &out),
        Command::Run { spec, out_dir } => commands::run(&spec, &out_dir),
        Command::Calibrate { method } => commands::calibrate(&method),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            match &err {
                CliError::Config(msg) => eprintln!("configuration error: {msg}"),
                CliError::Io(msg) => eprintln!("i/o error: {msg}"),
                CliError::Infeasible => eprintln!("no feasible selection"),
            }
            ExitCode::from(err.exit_code())
        }
    }
}
