use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dbrec::cli::{run, Command};
use dbrec::config::RunConfig;

/// Dual-bridging recommender pipeline: prepare, pretrain, train, eval,
/// export, ablate.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// prepare | pretrain | train | eval | export | ablate
    command: Command,
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// dbrec | dbrec-o | dbrec-u | dbrec-i
    #[arg(long)]
    variant: Option<String>,
    /// Override any config key, e.g. `--set lr=0.001 --set hidden_uv=[32,8]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut overrides = args.overrides;
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(v) = args.variant {
        overrides.push(format!("variant=\"{v}\""));
    }
    let result = RunConfig::resolve(args.config.as_deref(), &overrides).and_then(|cfg| run(args.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
