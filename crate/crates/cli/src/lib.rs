//! Operator entry points: corpus synthesis, training, inference, evaluation
//! and the verification battery.

pub mod commands;
pub mod config;
pub mod wav;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Thread count for the rayon pool.
pub const THREADS_ENV: &str = "NEUROHEED_THREADS";

#[derive(Debug, Parser)]
#[command(name = "neuroheed", version, about = "EEG-steered target speaker extraction")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.batch_size=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic speech and EEG corpus.
    Synth(SynthArgs),
    /// Train a model offline or online.
    Train(TrainArgs),
    /// Extract the attended speaker for a corpus split and score it.
    Infer(InferArgs),
    /// Summarize one or more evaluation reports.
    Eval(EvalArgs),
    /// Run the invariant battery.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus directory (default `<out_dir>/corpus`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "offline")]
    pub mode: Mode,
    /// Corpus directory (default `<out_dir>/corpus`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Run directory (default `<out_dir>/train-<mode>`).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Initialize parameters from this checkpoint (online mode).
    #[arg(long, conflicts_with = "resume")]
    pub warm_start: Option<PathBuf>,
    /// Continue a run from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory (default `<out_dir>/corpus`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "offline")]
    pub mode: Mode,
    /// Output root (default `<out_dir>/infer`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Buffer length in seconds.
    #[arg(long)]
    pub wb: Option<f64>,
    /// Chunk length in seconds.
    #[arg(long)]
    pub wc: Option<f64>,
    #[arg(long)]
    pub no_inf_norm: bool,
    #[arg(long = "no-1s-init")]
    pub no_init: bool,
    #[arg(long)]
    pub no_speaker_encoder: bool,
    /// Skip writing WAV files.
    #[arg(long)]
    pub no_wav: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directories holding `records.jsonl` and `summary.json`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Print the summaries as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    ClnLookahead,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Run only checks whose name starts with this prefix (repeatable).
    #[arg(long)]
    pub only: Vec<String>,
    /// Random points per gradient check.
    #[arg(long, default_value_t = 10)]
    pub points: u64,
    /// Utterances in the streaming-offline comparison.
    #[arg(long, default_value_t = 10)]
    pub utterances: usize,
    /// Write the report as JSON to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Inject a defect to exercise the battery.
    #[arg(long, value_enum, hide = true)]
    pub fault: Option<FaultArg>,
}

/// Exit code for an error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<neuroheed::Error>() {
            return match e {
                neuroheed::Error::Data { .. } | neuroheed::Error::Io { .. } | neuroheed::Error::Checkpoint(_) => EXIT_DATA,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

/// Sizes the global thread pool from `NEUROHEED_THREADS`, if set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_ENV}='{v}' is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return EXIT_USAGE;
    }
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
