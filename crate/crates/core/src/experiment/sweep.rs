use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SchemeConfig};
use super::output::{fmt_f64, write_outputs};
use super::run::{execute, RunOutcome, RunSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Dt,
    Tau,
    NKernels,
    /// Gauss-Newton iteration budget
    L,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(SweepAxis::Dt),
            "tau" => Ok(SweepAxis::Tau),
            "n_kernels" | "n-kernels" => Ok(SweepAxis::NKernels),
            "L" | "l" => Ok(SweepAxis::L),
            other => Err(Error::config("axis", format!("unknown sweep axis `{other}` (dt, tau, n_kernels, L)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dt => "dt",
            SweepAxis::Tau => "tau",
            SweepAxis::NKernels => "n_kernels",
            SweepAxis::L => "L",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config("values", format!("`{v}` is not a positive integer")))
            }
        };
        match self {
            SweepAxis::Dt => out.time.dt = value,
            SweepAxis::Tau => out.solver.tau = value,
            SweepAxis::NKernels => out.model.spec = out.model.spec.with_n_units(as_count(value)?),
            SweepAxis::L => {
                let inner = out
                    .scheme
                    .inner_mut()
                    .ok_or_else(|| Error::config("axis", "L needs a scheme with Gauss-Newton iterations"))?;
                inner.max_iterations = as_count(value)?;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: RunSummary,
    /// `log(e_i / e_{i-1}) / log(v_i / v_{i-1})` for the dt axis
    pub observed_order: Option<f64>,
    /// largest parameter difference to explicit OtD over the run, for the L axis
    pub otd_max_theta_diff: Option<f64>,
}

/// Runs `cfg` once per value, in parallel; outputs go to `<dir>/<axis>-<i>`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "need at least one value"));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<_>>()?;
    let otd_reference = match axis {
        SweepAxis::L => {
            let mut otd = cfg.clone();
            otd.scheme = SchemeConfig::OtdExplicit {};
            Some(execute(&otd)?)
        }
        _ => None,
    };
    let outcomes: Vec<RunOutcome> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let outcome = execute(c)?;
            if let Some(dir) = dir {
                write_outputs(&dir.join(format!("{}-{i}", axis.name())), c, &outcome)?;
            }
            Ok(outcome)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<SweepRow> = Vec::with_capacity(values.len());
    for (i, (value, outcome)) in values.iter().zip(outcomes).enumerate() {
        let observed_order = match (axis, i) {
            (SweepAxis::Dt, i) if i > 0 => {
                match (rows[i - 1].summary.final_error, outcome.summary.final_error) {
                    (Some(prev), Some(cur)) => Some((cur / prev).ln() / (value / values[i - 1]).ln()),
                    _ => None,
                }
            }
            _ => None,
        };
        let otd_max_theta_diff = otd_reference.as_ref().map(|r| max_theta_diff(r, &outcome).0);
        rows.push(SweepRow {
            value: *value,
            summary: outcome.summary,
            observed_order,
            otd_max_theta_diff,
        });
    }
    if let Some(dir) = dir {
        write_sweep_table(&dir.join("sweep.csv"), axis, &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_table(path: &Path, axis: SweepAxis, rows: &[SweepRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        axis.name(),
        "final_error",
        "observed_order",
        "min_bound_margin",
        "bounds_valid",
        "persistent",
        "otd_max_theta_diff",
        "config_hash",
    ])?;
    let o = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            fmt_f64(r.value),
            o(r.summary.final_error),
            o(r.observed_order),
            o(r.summary.min_bound_margin),
            r.summary.bounds_valid.to_string(),
            r.summary.collapse.as_ref().map(|c| c.persistent.to_string()).unwrap_or_default(),
            o(r.otd_max_theta_diff),
            r.summary.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(max over all steps, per-step max)` of `|theta^a_k - theta^b_k|_inf`.
pub fn max_theta_diff(a: &RunOutcome, b: &RunOutcome) -> (f64, Vec<f64>) {
    let per_step: Vec<f64> = a
        .thetas()
        .zip(b.thetas())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        .collect();
    (per_step.iter().copied().fold(0.0, f64::max), per_step)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub max_theta_diff: f64,
    pub per_step: Vec<f64>,
    pub final_error_a: Option<f64>,
    pub final_error_b: Option<f64>,
    pub summary_a: RunSummary,
    pub summary_b: RunSummary,
}

/// Paired trajectory difference of two configs with equal parameter count and step count.
pub fn compare(a: &ExperimentConfig, b: &ExperimentConfig, dir: Option<&Path>) -> Result<CompareReport> {
    let (ra, rb) = rayon::join(|| execute(a), || execute(b));
    let (ra, rb) = (ra?, rb?);
    if ra.summary.n_params != rb.summary.n_params || ra.steps.len() != rb.steps.len() {
        return Err(Error::config(
            "compare",
            "configs must share the parameter count and the number of steps",
        ));
    }
    let (max, per_step) = max_theta_diff(&ra, &rb);
    if let Some(dir) = dir {
        write_outputs(&dir.join("a"), a, &ra)?;
        write_outputs(&dir.join("b"), b, &rb)?;
        let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
        w.write_record(["step", "time", "max_abs_theta_diff"])?;
        for (k, d) in per_step.iter().enumerate() {
            w.write_record([k.to_string(), fmt_f64(ra.steps[k].time), fmt_f64(*d)])?;
        }
        w.flush()?;
    }
    Ok(CompareReport {
        max_theta_diff: max,
        per_step,
        final_error_a: ra.summary.final_error,
        final_error_b: rb.summary.final_error,
        summary_a: ra.summary,
        summary_b: rb.summary,
    })
}

