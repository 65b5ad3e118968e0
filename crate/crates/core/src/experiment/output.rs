//! Artifact writers. Floats are written with 17 significant digits so that
//! every value round-trips.

use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::run::RunOutcome;
use crate::error::Result;

pub const STEPS_FILE: &str = "steps.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";
pub const SPECTRA_FILE: &str = "spectra.csv";
pub const COLLAPSE_FILE: &str = "collapse.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// `steps.csv` columns before the trailing `theta_0..theta_{p-1}`.
pub const STEP_COLUMNS: [&str; 12] = [
    "step",
    "time",
    "norm_m",
    "error",
    "epsilon",
    "residual_norm",
    "gn_iterations",
    "gn_converged",
    "first_order_violation",
    "effective_rank",
    "condition_ratio",
    "loss",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes every artifact of `outcome` into `dir`, creating it.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_steps(&dir.join(STEPS_FILE), outcome)?;
    write_bounds(&dir.join(BOUNDS_FILE), outcome)?;
    write_spectra(&dir.join(SPECTRA_FILE), outcome)?;
    if outcome.collapse.is_some() {
        write_collapse(&dir.join(COLLAPSE_FILE), outcome)?;
    }
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&outcome.summary)?)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    Ok(())
}

pub fn write_steps(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = outcome.steps.first().map_or(0, |s| s.theta.len());
    let header: Vec<String> = STEP_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain((0..p).map(|i| format!("theta_{i}")))
        .collect();
    w.write_record(&header)?;
    for s in &outcome.steps {
        let mut row = vec![
            s.step.to_string(),
            fmt_f64(s.time),
            fmt_f64(s.norm_m),
            opt_f64(s.error),
            opt_f64(s.epsilon),
            opt_f64(s.residual_norm),
            opt(s.gn_iterations),
            opt(s.gn_converged),
            opt_f64(s.first_order_violation),
            s.effective_rank.to_string(),
            fmt_f64(s.condition_ratio),
            opt_f64(s.loss),
        ];
        row.extend(s.theta.iter().copied().map(fmt_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `step,time,bound,measured,value,observed,applicable`.
pub fn write_bounds(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "time", "bound", "measured", "value", "observed", "applicable"])?;
    for b in &outcome.bounds {
        let measured = serde_json::to_value(b.measured)?;
        let measured = measured.as_str().unwrap_or_default();
        for (k, v) in b.values.iter().enumerate() {
            w.write_record([
                k.to_string(),
                fmt_f64(outcome.steps[k].time),
                b.name.clone(),
                measured.to_string(),
                fmt_f64(*v),
                opt_f64(b.observed.as_ref().map(|o| o[k])),
                b.applicable.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format: `step,index,sigma`.
pub fn write_spectra(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "index", "sigma"])?;
    for (k, spectrum) in &outcome.spectra {
        for (i, s) in spectrum.iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), fmt_f64(*s)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_collapse(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let Some(run) = &outcome.collapse else {
        return Ok(());
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "time",
        "condition_ratio",
        "effective_rank",
        "n_params",
        "n_groups",
        "initial_group_spread",
        "persistent",
    ])?;
    for r in &run.reports {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.time),
            fmt_f64(r.condition_ratio),
            r.effective_rank.to_string(),
            r.n_params.to_string(),
            r.duplicate_groups.len().to_string(),
            fmt_f64(r.initial_group_spread),
            r.persistent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
