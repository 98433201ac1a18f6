//! `angap`: difficulty scoring, calibration and curricula from the shell.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. Failures print a
//! single `error: kind=<usage|runtime> message=<json string>` line on stderr
//! ahead of any human-oriented detail.

/// `println!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A bad flag, config entry or missing input; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "angap", version, about = "Angular Gap difficulty, hyperspherical calibration and curricula on embedding data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Flat `key = value` file; command-line flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory [default: $ANGAP_OUT_DIR, else ./angap-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Master seed for every random stream [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run all data-parallel loops on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic embedding dataset with ground-truth difficulty.
    Generate(commands::GenerateArgs),
    /// Train the hyperspherical head on an embedding dataset.
    Train(commands::TrainCmdArgs),
    /// Fit post-hoc calibration on a holdout split.
    Calibrate(commands::CalibrateArgs),
    /// Write the per-example difficulty report.
    Score(commands::ScoreArgs),
    /// Score plus ECE, top-k and (with HSF) rank correlations.
    Evaluate(commands::EvaluateArgs),
    /// Train with paced, difficulty-ordered loading.
    Curriculum(commands::CurriculumArgs),
    /// Curricular self-training from a labeled source to an unlabeled target.
    Uda(commands::UdaArgs),
    /// Pacing-grid sweep over (a, b) and seeds.
    Sweep(commands::SweepArgs),
    /// Rebuild tables and correlations from saved outputs.
    Report(commands::ReportArgs),
}

fn init_logging(g: &GlobalArgs) {
    let level = if g.quiet {
        log::LevelFilter::Error
    } else {
        match g.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    // Deliberately not reading RUST_LOG: the output directory is the only
    // setting taken from the environment.
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn error_line(kind: &str, message: &str) {
    let quoted = serde_json::to_string(message).unwrap_or_else(|_| format!("\"{message}\""));
    eprintln!("error: kind={kind} message={quoted}");
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<angular_gap::Error>(), Some(angular_gap::Error::InvalidParameter { .. }))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.kind().as_str().unwrap_or("invalid arguments").to_string();
            error_line("usage", &first);
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    init_logging(&cli.global);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
            if is_usage(&err) {
                error_line("usage", &message);
                ExitCode::from(2)
            } else {
                error_line("runtime", &message);
                ExitCode::from(1)
            }
        }
    }
}
