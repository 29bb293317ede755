//! `dbea` command-line entry point.
//!
//! Usage: `dbea <subcommand> --config <path> [--seed N] [--out DIR]
//! [--level image|object] [--checkpoint PATH]`
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
//! `DBEA_THREADS` overrides the worker count (default 1, serial).

use std::path::PathBuf;
use std::process::ExitCode;

use dbea_cli::commands::{
    cmd_eval, cmd_generate, cmd_novel_bench, cmd_ood_bench, cmd_overhead, cmd_report, cmd_train,
    CommandContext,
};
use dbea_cli::config::load_config;
use dbea_cli::error::{CliError, Result};
use dbea_cli::evalrun::ScoreLevel;
use dbea_cli::RunConfig;

const USAGE: &str = "usage: dbea <generate|train|eval|ood-bench|novel-bench|overhead|report> \
[--config PATH] [--seed N] [--out DIR] [--level image|object] [--checkpoint PATH]";

struct Args {
    subcommand: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    level: ScoreLevel,
    checkpoint: Option<PathBuf>,
}

fn parse_args(mut argv: std::env::Args) -> Result<Args> {
    let _bin = argv.next();
    let subcommand = argv
        .next()
        .ok_or_else(|| CliError::Usage(USAGE.to_string()))?;
    let mut args = Args {
        subcommand,
        config: None,
        seed: None,
        out: None,
        level: ScoreLevel::Image,
        checkpoint: None,
    };
    while let Some(flag) = argv.next() {
        let mut value = || {
            argv.next()
                .ok_or_else(|| CliError::Usage(format!("missing value for {flag}")))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--seed" => {
                args.seed = Some(
                    value()?
                        .parse()
                        .map_err(|e| CliError::Usage(format!("--seed: {e}")))?,
                )
            }
            "--out" => args.out = Some(PathBuf::from(value()?)),
            "--level" => args.level = value()?.parse()?,
            "--checkpoint" => args.checkpoint = Some(PathBuf::from(value()?)),
            "--help" | "-h" => return Err(CliError::Usage(USAGE.to_string())),
            other => return Err(CliError::Usage(format!("unknown flag {other}\n{USAGE}"))),
        }
    }
    Ok(args)
}

fn run() -> Result<()> {
    let args = parse_args(std::env::args())?;
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default_dbea(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    let ctx = CommandContext {
        config,
        checkpoint: args.checkpoint,
        level: args.level,
    };
    match args.subcommand.as_str() {
        "generate" => cmd_generate(&ctx),
        "train" => cmd_train(&ctx),
        "eval" => cmd_eval(&ctx),
        "ood-bench" => cmd_ood_bench(&ctx),
        "novel-bench" => cmd_novel_bench(&ctx),
        "overhead" => cmd_overhead(&ctx),
        "report" => cmd_report(&ctx),
        other => Err(CliError::Usage(format!("unknown subcommand {other}\n{USAGE}"))),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
