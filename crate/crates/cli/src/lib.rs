//! Config-driven front end: one TOML file describes one experiment, whose
//! `kind` selects the exact solver, certificate check or simulation to run.

// `!(x >= 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod delta;
pub mod error;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use delta::{delta_ci, ConfidenceInterval};
pub use error::CliError;
pub use output::{emit_plot_data, OutputFile, PlotSeries, RunRecord};
pub use run::{run, RunOutcome};

/// Output directory: the flag, then the environment, then the config, then the default.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(d) = flag {
        return d.to_path_buf();
    }
    if let Some(d) = std::env::var_os(config::OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(d);
    }
    config
        .out_dir()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT_DIR))
}

/// Write the run's files plus `run.json` into `dir`.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<(), CliError> {
    let mut files = outcome.files.clone();
    let json = serde_json::to_string_pretty(&outcome.record).map_err(|e| CliError::Io(e.to_string()))?;
    files.push(OutputFile {
        name: "run.json".into(),
        contents: json + "\n",
    });
    output::write_files(dir, &files)
}

/// Load, override, run and write. Returns the output directory on success.
pub fn execute(path: &Path, seed: Option<u64>, out_dir: Option<&Path>) -> Result<(PathBuf, RunOutcome), CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.set_seed(s);
    }
    let dir = resolve_out_dir(out_dir, &config);
    let outcome = run(&config)?;
    write_outcome(&outcome, &dir)?;
    Ok((dir, outcome))
}
