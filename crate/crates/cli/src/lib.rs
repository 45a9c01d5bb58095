//! Config-driven experiment runner for `posdyn-core`.
//!
//! One invocation reads one JSON config, runs one subcommand and writes CSV
//! and JSON artifacts plus `manifest.json` into the output directory.

pub mod config;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use config::{parse_config, ConfigError, ExperimentConfig, Overrides};
use run::Completion;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Exit status for a failed run.
///
/// Core errors that reject the inputs map to [`EXIT_INVALID`]; everything
/// else (numerical breakdown, I/O) maps to [`EXIT_NUMERICAL`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use posdyn_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidParameter { .. }
            | E::InvalidDistribution(_)
            | E::EmptyInput
            | E::InvalidRange { .. }
            | E::Shape(_)
            | E::Cfl { .. }
            | E::Precondition(_),
        ) => EXIT_INVALID,
        _ => EXIT_NUMERICAL,
    }
}

pub struct Invocation {
    pub config: PathBuf,
    pub overrides: Overrides,
    pub quiet: bool,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

/// Runs one invocation end to end and returns the process exit status.
pub fn execute(inv: &Invocation) -> i32 {
    let config = match load(&inv.config, &inv.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INVALID;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&config.out_dir) {
        eprintln!("cannot create {}: {e}", config.out_dir.display());
        return EXIT_NUMERICAL;
    }

    let started = OffsetDateTime::now_utc()
        .format(&Rfc3339)
        .unwrap_or_default();
    let clock = Instant::now();
    let outcome = run::run(&config);
    let elapsed = clock.elapsed().as_secs_f64();

    let status = match &outcome {
        Ok(Completion::Done) => EXIT_OK,
        Ok(Completion::NotConverged) => {
            eprintln!("mean-field iteration did not converge; outputs written");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    let manifest = json!({
        "config": config,
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started": started,
        "elapsed_s": elapsed,
        "exit_status": status,
    });
    if let Err(e) = output::write_json(&config.out_dir, "manifest.json", &manifest) {
        eprintln!("cannot write manifest: {e:#}");
        return status.max(EXIT_NUMERICAL);
    }
    if !inv.quiet && status == EXIT_OK {
        println!(
            "{}: done in {elapsed:.2}s, outputs in {}",
            config.subcommand.name(),
            config.out_dir.display()
        );
    }
    status
}
