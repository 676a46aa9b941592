use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cusal_core::runner::{run, RunFlags};

#[derive(Parser)]
#[command(name = "cusal", version, about = "Pool-based active-learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) replica of a TOML experiment config.
    Run {
        config: PathBuf,
        /// Validate the config and data paths, then exit.
        #[arg(long)]
        dry_run: bool,
        /// Worker threads for replica fan-out (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Added to every configured seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            dry_run,
            jobs,
            out,
            seed_offset,
        } => {
            let flags = RunFlags {
                dry_run,
                jobs,
                out,
                seed_offset,
            };
            ExitCode::from(run(&config, &flags) as u8)
        }
    }
}
