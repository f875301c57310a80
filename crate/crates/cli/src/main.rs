mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, EvalArgs, ExplainArgs, PrepareArgs, SelftestArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "redkgr", version, about = "Knowledge graph reasoning by recursive r-digraph encoding")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run on one worker with a fixed reduction order, so repeated runs
    /// produce identical output.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Seed for parameter init, sampling and synthetic graphs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Root that relative dataset names resolve against.
    #[arg(long, global = true, env = "REDKGR_DATA", default_value = "data")]
    pub data_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset directory and write its index files.
    Prepare(PrepareArgs),
    /// Train a model and keep the checkpoint with the best validation MRR.
    Train(TrainArgs),
    /// Filtered ranking evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Extract the attention-selected evidence subgraph of one triple.
    Explain(ExplainArgs),
    /// Time full-query inference against the per-candidate loop.
    Bench(BenchArgs),
    /// Run the built-in property suites.
    Selftest(SelftestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
