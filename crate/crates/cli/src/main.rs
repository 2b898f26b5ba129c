mod commands;
mod context;
mod exit;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "forgeline", version, about = "Artifact localization, explanation and refinement toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Output directory for reports, run logs and the config echo.
    #[arg(long, global = true, default_value = "forgeline-out")]
    pub out: PathBuf,
    /// Backend configuration file.
    #[arg(long, global = true, env = "FORGELINE_BACKENDS")]
    pub backends: Option<PathBuf>,
    /// Run options as JSON; command-line flags take precedence. A config
    /// echo written by an earlier run is accepted too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parallel images in flight.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manifest checks, statistics and synthetic fixtures.
    #[command(subcommand)]
    Dataset(commands::dataset::DatasetCmd),
    /// Localization, explanation, detection and growth metrics.
    #[command(subcommand)]
    Eval(commands::eval::EvalCmd),
    /// Iterative regeneration and inpainting.
    #[command(subcommand)]
    Refine(commands::refine::RefineCmd),
    /// Localization under JPEG, noise and blur perturbations.
    Robustness(commands::robustness::RobustnessArgs),
    /// Feature clustering, stratified sampling and judge filtering.
    #[command(subcommand)]
    Curate(commands::curate::CurateCmd),
    /// Endpoint health, conformance and a local mock server.
    #[command(subcommand)]
    Backends(commands::backends::BackendsCmd),
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Failure::USAGE.into() } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.global.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit::code_for(&e);
            eprintln!("error: {e:#}");
            code.into()
        }
    }
}
