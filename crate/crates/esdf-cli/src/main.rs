//! `esdf` — synthetic-log generation, attribution snapshots, training,
//! evaluation, and cross-run reports for delayed-feedback conversion models.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
//! error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<esdf_core::Error> for CliError {
    fn from(e: esdf_core::Error) -> Self {
        let code = match &e {
            esdf_core::Error::Numerical(_) => 4,
            esdf_core::Error::Config(_) => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn tool_header() -> String {
    format!("tool esdf {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Parser)]
#[command(name = "esdf", version, about = "Delayed-feedback conversion modeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log with its ground-truth file.
    Generate(GenerateArgs),
    /// Label a log at an observation date under a policy.
    Snapshot(SnapshotArgs),
    /// Train one objective and write a checkpoint plus history.
    Train(TrainArgs),
    /// Score a log with a checkpoint against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluation reports across seeds and objectives.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output prefix; writes <out>.events.tsv and <out>.truth.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Number of impressions.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    n_fields: Option<usize>,
    /// Fully resolved day slots (T); the delay space has T+2 bins.
    #[arg(long)]
    max_delay_days: Option<u32>,
    #[arg(long)]
    seconds_per_slot: Option<i64>,
    /// Target fraction of conversions on the first day.
    #[arg(long)]
    day1_mass: Option<f64>,
    /// First click day (timestamps start at day * seconds-per-slot).
    #[arg(long)]
    start_day: Option<i64>,
    /// Click window length in days.
    #[arg(long)]
    span_days: Option<i64>,
    /// Global index of the first record; use to emit disjoint splits of one
    /// world.
    #[arg(long)]
    offset: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SnapshotArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// esmm-day1 | esmm-calendar-day1 | naive-drop | shift | full-censored |
    /// ground-truth (window from --window-days).
    #[arg(long)]
    policy: Option<String>,
    /// Observation date in days since epoch start.
    #[arg(long)]
    observe_day: Option<f64>,
    /// Observation date in raw epoch seconds (overrides --observe-day).
    #[arg(long)]
    observe_ts: Option<i64>,
    /// Attribution window for ground-truth labels.
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    max_delay_days: Option<u32>,
    #[arg(long)]
    seconds_per_slot: Option<i64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    log: PathBuf,
    /// esdf | esmm | naive | shift | dfm.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    observe_day: Option<f64>,
    #[arg(long)]
    observe_ts: Option<i64>,
    /// Additional observation days for day-by-day re-maturation; epochs
    /// cycle through all snapshots in order.
    #[arg(long)]
    resnapshot_days: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    /// Comma-separated hidden widths, e.g. 64,32.
    #[arg(long)]
    hidden: Option<String>,
    /// Gradient steps per expectation step.
    #[arg(long)]
    em_steps: Option<usize>,
    /// Run the expectation step once per epoch over the full snapshot.
    #[arg(long)]
    full_batch_estep: bool,
    /// Day-1 labels end at the next calendar midnight instead of 24h after
    /// the click.
    #[arg(long)]
    esmm_calendar_day: bool,
    #[arg(long)]
    max_delay_days: Option<u32>,
    #[arg(long)]
    seconds_per_slot: Option<i64>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    out_history: PathBuf,
    /// Held-out log for per-epoch metrics (optional).
    #[arg(long)]
    eval_log: Option<PathBuf>,
    /// Attribution window for held-out ground-truth labels.
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Machine-readable report output (one metric per row).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    max_delay_days: Option<u32>,
    #[arg(long)]
    seconds_per_slot: Option<i64>,
    /// Count every negative in every delay bucket's denominator.
    #[arg(long)]
    negatives_in_buckets: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Evaluation report files to aggregate.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Comparison table output.
    #[arg(long)]
    out: PathBuf,
    /// Mean delay-histogram data file (one row per slot).
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    /// Per-objective delay-bucket log-loss data file.
    #[arg(long)]
    loss_by_day_out: Option<PathBuf>,
    /// Base objective for relative improvement.
    #[arg(long, default_value = "esmm")]
    base: String,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Snapshot(args) => commands::snapshot(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
