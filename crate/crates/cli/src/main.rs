mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Usage or configuration problem (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub const RUN_ROOT_ENV: &str = "AIGI_RUN_ROOT";

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage or configuration error
  2  data error (unreadable manifest, image, checkpoint or oracle; label mismatch)
  3  training aborted (non-finite loss)

Settings are resolved as defaults, then the --config file, then flags.
Runs write only inside --run-dir, which defaults to $AIGI_RUN_ROOT/<command>
(or runs/<command>).";

#[derive(Debug, Parser)]
#[command(name = "aigi", version, about = "Detect and attribute AI-generated images", after_help = EXIT_CODES)]
struct Cli {
    /// TOML file with one table per command.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory that receives every output of the run.
    #[arg(long, global = true, value_name = "DIR")]
    run_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fine-tune the dual encoder on a manifest's train split.
    Train(commands::TrainArgs),
    /// Attribute images to registry classes with a checkpoint.
    Predict(commands::PredictArgs),
    /// Score prediction files against manifest labels.
    Evaluate(commands::EvaluateArgs),
    /// Reconstruction-error scores and thresholded verdicts.
    Dire(commands::DireArgs),
    /// Merge and re-render report.csv files.
    Report(commands::ReportArgs),
    /// Write the synthetic fixture datasets.
    #[command(hide = true)]
    MakeFixtures(commands::FixtureArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Dire(_) => "dire",
            Command::Report(_) => "report",
            Command::MakeFixtures(_) => "make-fixtures",
        }
    }
}

#[derive(Debug)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub run_dir: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<aigi_core::Error>() {
            return match e {
                aigi_core::Error::Config(_) | aigi_core::Error::UnknownFormat(_) => 1,
                aigi_core::Error::NonFiniteLoss { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let run_dir = cli.run_dir.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(cli.command.name())
    });
    let common = Common {
        config: cli.config,
        run_dir,
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a, &common),
        Command::Predict(a) => commands::predict(a, &common),
        Command::Evaluate(a) => commands::evaluate(a, &common),
        Command::Dire(a) => commands::dire(a, &common),
        Command::Report(a) => commands::report(a, &common),
        Command::MakeFixtures(a) => commands::make_fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
