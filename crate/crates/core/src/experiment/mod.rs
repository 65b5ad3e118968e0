//! Declarative experiments: TOML configs, runs, sweeps, paired comparisons
//! and their CSV/JSON artifacts.

mod config;
mod output;
mod run;
mod setup;
mod sweep;

use std::path::Path;

pub use config::{
    BoundsConfig, DiagnosticsConfig, ExperimentConfig, InitialConfig, ModelConfig, OutputConfig, ProblemConfig,
    ReferenceConfig, SchemeConfig, SolverConfig, TimeConfig, TimeErrorConfig, OUTPUT_ROOT_ENV, SCHEMA_VERSION,
};
pub use output::{
    fmt_f64, write_outputs, BOUNDS_FILE, COLLAPSE_FILE, CONFIG_FILE, SPECTRA_FILE, STEPS_FILE, STEP_COLUMNS,
    SUMMARY_FILE,
};
pub use run::{execute, BoundSeries, BoundSummary, CollapseSummary, Measured, RunOutcome, RunSummary, StepRow};
pub use setup::{collapsed_start, BoundConstants, Problem};
pub use sweep::{compare, max_theta_diff, sweep, CompareReport, SweepAxis, SweepRow};

use crate::error::Result;

/// Executes `cfg` and writes its artifacts into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let outcome = execute(cfg)?;
    write_outputs(dir, cfg, &outcome)?;
    Ok(outcome)
}
