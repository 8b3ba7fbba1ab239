//! Command-line front end: `mixedcap <command> [--config file] [--out dir] [--threads k]`.
//!
//! Exit status: 0 on success, 1 on a numerical failure, 2 on invalid usage or configuration.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixedcap::Error;

#[derive(Parser)]
#[command(name = "mixedcap", version, about = "Mixed boundary p-Laplace problems on a half-cylinder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports and fields.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; overrides the config field.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Round trip, distortion bounds and ellipticity of the transformation on random samples.
    TransformCheck(RunArgs),
    /// Solve the mixed problem on the cylinder and optionally the transformed ball problem.
    Solve(RunArgs),
    /// Condenser, Neumann cylinder or Sobolev capacity.
    Capacity(RunArgs),
    /// Wiener series at infinity and its classification.
    Wiener(RunArgs),
    /// Builtin examples.
    Examples {
        #[command(subcommand)]
        action: ExamplesAction,
    },
}

#[derive(Subcommand)]
enum ExamplesAction {
    /// Print the builtin obstacle generators as JSON.
    List,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. } | Error::ExcludedRay(_) | Error::UndefinedAtOrigin => 1,
        Error::InvalidParameter(_)
        | Error::ResolutionTooCoarse(_)
        | Error::Unsupported(_)
        | Error::Io(_)
        | Error::Parse(_) => 2,
    }
}

type Runner = fn(&config::Resolved, &Path) -> mixedcap::Result<commands::Outcome>;

fn run(args: &RunArgs, runner: Runner) -> ExitCode {
    let resolved = config::load(args.config.as_deref()).and_then(|(cfg, base)| config::resolve(cfg, &base));
    let resolved = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(k) = args.threads.or(resolved.config.threads) {
        if k == 0 {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let existed = args.out.exists();
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::from(2);
    }
    match runner(&resolved, &args.out) {
        Ok(outcome) => {
            let _ = writeln!(std::io::stdout(), "{}", outcome.summary);
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: numerical check failed; see {}", args.out.join("report.json").display());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if !existed {
                // Only succeeds when nothing was written.
                let _ = std::fs::remove_dir(&args.out);
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::TransformCheck(a) => run(a, commands::transform_check),
        Command::Solve(a) => run(a, commands::solve),
        Command::Capacity(a) => run(a, commands::capacity),
        Command::Wiener(a) => run(a, commands::wiener),
        Command::Examples { action: ExamplesAction::List } => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&commands::examples_list()).unwrap_or_default());
            ExitCode::SUCCESS
        }
    }
}
