use std::path::PathBuf;

use clap::Parser;
use posdyn::config::Overrides;
use posdyn::{execute, Invocation};

/// Run a posdyn experiment from a JSON config.
///
/// `--seed` and `--out-dir` take precedence over the values in the file.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Suppress the completion line on stdout.
    #[arg(long)]
    quiet: bool,
}

fn main() {
    let args = Args::parse();
    let inv = Invocation {
        config: args.config,
        overrides: Overrides {
            seed: args.seed,
            out_dir: args.out_dir,
        },
        quiet: args.quiet,
    };
    std::process::exit(execute(&inv));
}
