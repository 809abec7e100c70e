//! `spotcheck`: command-line front end for spot-checked randomness
//! expansion analysis.
//!
//! Exit codes: 0 on success, 1 when `accumulate` does not reach the success
//! threshold, 2 on any input or processing error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(
    name = "spotcheck",
    version,
    about = "Spot-checked device-independent randomness expansion analysis"
)]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Write the primary output here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum-likelihood fit of calibration counts to the Tsirelson polytope.
    Fit {
        /// Counts as CSV (`x,y,a,b,count`) or JSON, or `builtin:<name>`.
        counts: PathBuf,
    },
    /// Statistical strength against local realism, in bits per trial.
    Strength {
        /// Distribution JSON or `builtin:<name>`.
        distribution: PathBuf,
    },
    /// Optimize a per-block PEF table.
    PefOpt(PefOptArgs),
    /// Expected block gain and variance of a PEF table.
    Rate {
        pef: PathBuf,
        distribution: PathBuf,
        /// Include the per-position gains.
        #[arg(long)]
        positions: bool,
    },
    /// Plan an experiment: feasibility, minimum blocks, best block length.
    Plan(PlanArgs),
    /// Simulate an honest experiment into a dataset directory.
    Simulate(SimulateArgs),
    /// Run the accumulation analysis over a dataset directory.
    Accumulate(AccumulateArgs),
    /// Extractor budget for a given input.
    ExtractParams(ExtractArgs),
    /// Expansion accounting of a successful run.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct PefOptArgs {
    pub distribution: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub k: u32,
    /// Middle anchor; searched when omitted.
    #[arg(long)]
    pub j_mid: Option<u64>,
}

#[derive(Args)]
pub struct PlanArgs {
    pub distribution: PathBuf,
    /// Soundness error; may be repeated.
    #[arg(long, required = true)]
    pub eps: Vec<f64>,
    /// Evaluate feasibility of this many blocks (requires `--k`).
    #[arg(long, conflicts_with = "trials")]
    pub blocks: Option<u64>,
    /// Evaluate feasibility of an expected trial budget (requires `--k`).
    #[arg(long)]
    pub trials: Option<f64>,
    /// Single block length exponent; otherwise `--k-min..=--k-max`.
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long, default_value_t = 15)]
    pub k_min: u32,
    #[arg(long, default_value_t = 19)]
    pub k_max: u32,
    #[arg(long, default_value_t = 1e-10)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 40)]
    pub beta_grid: usize,
    /// Threshold margin in standard deviations.
    #[arg(long, default_value_t = 2.5)]
    pub sigmas: f64,
}

#[derive(Args)]
pub struct SimulateArgs {
    pub distribution: PathBuf,
    #[arg(long)]
    pub k: u32,
    #[arg(long)]
    pub blocks: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub blocks_per_file: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub files_per_cycle: u64,
    #[arg(long, default_value_t = 0)]
    pub calibration_trials: u64,
    #[arg(long, default_value_t = 0)]
    pub trailing_calibration_trials: u64,
    /// Also write each block file as JSON lines next to the binary file.
    #[arg(long)]
    pub jsonl: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    PerTrial,
    PerBlock,
    PerFile,
}

#[derive(Args)]
pub struct AccumulateArgs {
    pub data_dir: PathBuf,
    /// Taken from `--pef` when omitted.
    #[arg(long)]
    pub k: Option<u32>,
    /// Taken from `--pef` when omitted.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Success threshold in bits.
    #[arg(long)]
    pub gmin: f64,
    /// Blocks available before the run fails.
    #[arg(long)]
    pub blocks: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub j_mid: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub n_calib_min: u64,
    #[arg(long, default_value_t = 0)]
    pub deadtime: u64,
    #[arg(long, value_enum, default_value_t = Check::PerBlock)]
    pub check: Check,
    /// Keep every N-th trace point; 0 keeps only the last.
    #[arg(long, default_value_t = 1)]
    pub trace_decimation: u64,
    /// Write the witness trace CSV here.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Use this table for every cycle instead of fitting calibration data.
    #[arg(long)]
    pub pef: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub m_in: u64,
    #[arg(long)]
    pub sigma_in: f64,
    #[arg(long)]
    pub eps_ext: f64,
    /// Overall soundness error; defaults to `eps_ext`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// PEF power, for the entropy cap of the admissible set.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Output of `accumulate`.
    #[arg(long, required_unless_present = "blocks_run")]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub blocks_run: Option<u64>,
    #[arg(long)]
    pub k: u32,
    /// Output of `extract-params`.
    #[arg(long, required_unless_present_all = ["k_out", "d_s"])]
    pub extractor: Option<PathBuf>,
    #[arg(long)]
    pub k_out: Option<u64>,
    #[arg(long)]
    pub d_s: Option<u64>,
}

pub enum Outcome {
    Success,
    ProtocolFailure,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let out = commands::Output::new(cli.format, cli.output.clone());
    let result = match cli.command {
        Command::Fit { counts } => commands::fit(&out, &counts),
        Command::Strength { distribution } => commands::strength(&out, &distribution),
        Command::PefOpt(a) => commands::pef_opt(&out, &a),
        Command::Rate {
            pef,
            distribution,
            positions,
        } => commands::rate(&out, &pef, &distribution, positions),
        Command::Plan(a) => commands::plan(&out, &a),
        Command::Simulate(a) => commands::simulate(&out, &a),
        Command::Accumulate(a) => commands::accumulate(&out, &a),
        Command::ExtractParams(a) => commands::extract_params(&out, &a),
        Command::Report(a) => commands::report(&out, &a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ProtocolFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
