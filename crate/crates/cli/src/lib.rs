//! Experiment runner behind the `flowcps` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{run, Command, Invocation, Report};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "flowcps", version, about = "Noise audits, pretraining and GRPO runs for flow-matching samplers")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Noise-level curves for every (sampler, K) pair.
    Audit(Args),
    /// Train a velocity network by flow matching.
    Pretrain(Args),
    /// Fine-tune a pretrained network with GRPO.
    Grpo(Args),
    /// Run GRPO once per sampler variant from a shared base model.
    Compare(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// INI config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Runs the CLI and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, args) = match cli.command {
        Sub::Audit(a) => (Command::Audit, a),
        Sub::Pretrain(a) => (Command::Pretrain, a),
        Sub::Grpo(a) => (Command::Grpo, a),
        Sub::Compare(a) => (Command::Compare, a),
    };
    let inv = Invocation {
        command,
        config: args.config,
        force: args.force,
        seed: args.seed,
    };
    match run(&inv) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", report.output_dir.join(f).display());
            }
            0
        }
        Err(e) => {
            eprintln!("flowcps {}: {e}", command.name());
            e.exit_code()
        }
    }
}
