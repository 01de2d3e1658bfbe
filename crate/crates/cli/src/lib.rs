//! `pedp` command-line driver: corpus generation, training, standard and
//! interactive evaluation, and paired transcript export.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pedp_core::baselines::BaselineKind;
use pedp_core::PedpError;

pub mod commands;
pub mod config;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "pedp", version, about = "Planning-enhanced multi-action dialog policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an expert corpus from the simulated user.
    GenData(GenDataArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Turn-level precision/recall/F1 on a corpus.
    EvalStandard(EvalStandardArgs),
    /// Dialogs against the simulated user.
    EvalInteractive(EvalInteractiveArgs),
    /// Paired transcripts of two policies on the same goals.
    DumpDialogs(DumpDialogsArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeatable. Falls back to PEDP_SEED, then 0.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Prediction-time switches shared by training and evaluation.
#[derive(Debug, Args, Default, Clone)]
pub struct InferenceFlags {
    #[arg(long)]
    pub k_paths: Option<usize>,
    #[arg(long)]
    pub no_planning: bool,
    #[arg(long)]
    pub no_ensemble: bool,
    /// Threshold at 0.5 instead of sampling.
    #[arg(long)]
    pub no_sample: bool,
    /// Gumbel-Sigmoid on the probability rather than its logit.
    #[arg(long)]
    pub paper_literal_gs: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Domain schema JSON; the built-in toy world when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub dialogs: Option<usize>,
    /// Split every macro-action into single-action turns.
    #[arg(long)]
    pub single_action: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, value_parser = parse_baseline)]
    pub baseline: Option<BaselineKind>,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

#[derive(Debug, Args)]
pub struct EvalStandardArgs {
    #[command(flatten)]
    pub common: Common,
    /// Repeatable; one report entry per checkpoint.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

#[derive(Debug, Args)]
pub struct EvalInteractiveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Repeatable; `expert` names the scripted policy.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

#[derive(Debug, Args)]
pub struct DumpDialogsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Exactly two; `expert` names the scripted policy.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub goals: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|e: PedpError| e.to_string())
}

/// Maps a failure to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<PedpError>() {
        Some(PedpError::Divergence { .. }) => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
