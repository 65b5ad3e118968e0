use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProblemConfig, SchemeConfig, TimeErrorConfig, SCHEMA_VERSION};
use super::setup::Problem;
use crate::diagnostics::{analyze_collapse, CollapseRun};
use crate::dto::{
    accumulate_dto_bound_explicit, accumulate_dto_bound_implicit, dto_stability_envelope, require_tangent_membership,
    run_dto, time_integration_errors, DtoOptions, DtoScheme, StartJitter, TimeErrorKind, TimeErrorSource,
};
use crate::error::{Error, Result};
use crate::gradflow::natural_gradient_step;
use crate::models::ParamVector;
use crate::otd::{
    accumulate_bound_laplacian, accumulate_bound_lipschitz, otd_record, run_otd, stability_envelope, OtdOptions,
    OtdStepRecord,
};
use crate::quadrature::assemble_gram;

/// One row of `steps.csv`: the state at `(t_k, theta_k)`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub time: f64,
    pub norm_m: f64,
    pub error: Option<f64>,
    /// OtD projection error at `theta_k`
    pub epsilon: Option<f64>,
    /// DtO residual of the solve that produced `theta_k`
    pub residual_norm: Option<f64>,
    pub gn_iterations: Option<usize>,
    pub gn_converged: Option<bool>,
    pub first_order_violation: Option<f64>,
    pub effective_rank: usize,
    pub condition_ratio: f64,
    pub loss: Option<f64>,
    pub theta: Vec<f64>,
}

/// What a bound series is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measured {
    /// `|u(t_k) - u(theta_k)|_M`
    Error,
    /// `|u(theta_k)|_M`
    Norm,
    /// `|u(theta_k)|_M^2`
    NormSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSeries {
    pub name: String,
    pub measured: Measured,
    pub values: Vec<f64>,
    /// measured quantity per step; absent when there is no reference
    pub observed: Option<Vec<f64>>,
    /// false when the preconditions are only approximately met
    pub applicable: bool,
    pub time_error_source: Option<TimeErrorSource>,
}

impl BoundSeries {
    /// `min_k (bound_k - observed_k)`
    pub fn margin(&self) -> Option<f64> {
        let obs = self.observed.as_ref()?;
        Some(self.values.iter().zip(obs).map(|(b, o)| b - o).fold(f64::INFINITY, f64::min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub name: String,
    pub measured: Measured,
    pub applicable: bool,
    pub min_margin: Option<f64>,
    pub final_value: f64,
    pub time_error_source: Option<TimeErrorSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSummary {
    pub persistent: bool,
    pub first_break: Option<usize>,
    pub rank_constant: bool,
    pub initial_rank: usize,
    pub final_rank: usize,
    pub n_initial_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub problem: String,
    pub scheme: String,
    pub n_params: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub t_final: f64,
    pub reference: Option<String>,
    pub initial_fit_residual: f64,
    pub initial_error: Option<f64>,
    pub final_error: Option<f64>,
    pub max_error: Option<f64>,
    pub final_norm: f64,
    pub final_loss: Option<f64>,
    pub max_epsilon: Option<f64>,
    pub mean_epsilon: Option<f64>,
    pub max_residual: Option<f64>,
    pub mean_residual: Option<f64>,
    pub max_first_order_violation: Option<f64>,
    pub unconverged_steps: usize,
    pub bounds: Vec<BoundSummary>,
    /// smallest margin over applicable bounds; negative means a falsified bound
    pub min_bound_margin: Option<f64>,
    pub bounds_valid: bool,
    pub collapse: Option<CollapseSummary>,
    pub wall_time_s: f64,
}

/// All in-memory results of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub steps: Vec<StepRow>,
    pub bounds: Vec<BoundSeries>,
    /// `(step, descending Gram spectrum)` every `spectra_stride` steps
    pub spectra: Vec<(usize, Vec<f64>)>,
    pub collapse: Option<CollapseRun>,
}

impl RunOutcome {
    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|r| r.theta.as_slice())
    }
}

struct Trajectory {
    times: Vec<f64>,
    thetas: Vec<Vec<f64>>,
    epsilons: Option<Vec<f64>>,
    residuals: Option<Vec<f64>>,
    gn: Option<Vec<(usize, bool, f64)>>,
    otd_records: Option<Vec<OtdStepRecord>>,
}

/// Executes a validated config in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let clock = Instant::now();
    let problem = Problem::build(cfg)?;
    let disc = problem.discretization();
    let dt = cfg.time.dt;
    let n_steps = cfg.time.n_steps();
    let policy = cfg.solver.singular_policy;

    let traj = match &cfg.scheme {
        SchemeConfig::OtdExplicit {} | SchemeConfig::OtdZeta { .. } => {
            let mut opts = OtdOptions::explicit(dt, n_steps);
            opts.singular_policy = policy;
            if let SchemeConfig::OtdZeta { zeta, inner } = &cfg.scheme {
                opts.zeta = *zeta;
                opts.inner = *inner;
            }
            let tr = run_otd(&disc, &problem.theta0, 0.0, &opts)?;
            Trajectory {
                times: tr.times(),
                thetas: tr.thetas().map(<[f64]>::to_vec).collect(),
                epsilons: Some(tr.epsilons()),
                residuals: None,
                gn: None,
                otd_records: Some(tr.records),
            }
        }
        SchemeConfig::Ngd {} => {
            let energy = problem.energy.as_ref().ok_or_else(|| Error::config("scheme.kind", "ngd needs an energy"))?;
            let mut theta = problem.theta0.clone();
            let mut records = Vec::with_capacity(n_steps + 1);
            for k in 0..=n_steps {
                let t = k as f64 * dt;
                records.push(otd_record(&disc, k, t, &theta)?);
                if k < n_steps {
                    theta = natural_gradient_step(problem.model.as_ref(), &theta, energy, dt, &problem.rule, problem.tau)?;
                    if theta.as_slice().iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence {
                            step: k,
                            time: t,
                            message: "non-finite natural-gradient update".into(),
                            last_theta: records[k].theta.clone(),
                        });
                    }
                }
            }
            Trajectory {
                times: records.iter().map(|r| r.time).collect(),
                thetas: records.iter().map(|r| r.theta.clone()).collect(),
                epsilons: Some(records.iter().map(|r| r.epsilon).collect()),
                residuals: None,
                gn: None,
                otd_records: Some(records),
            }
        }
        SchemeConfig::DtoGn { zeta, inner, jitter } => {
            let mut opts = DtoOptions::new(dt, n_steps, DtoScheme::Zeta { zeta: *zeta }, *inner);
            if *jitter > 0.0 {
                opts.jitter = Some(StartJitter {
                    size: *jitter,
                    seed: cfg.seed,
                });
            }
            dto_trajectory(run_dto(&disc, &problem.theta0, 0.0, &opts)?)
        }
        SchemeConfig::DtoImex { inner } => {
            let opts = DtoOptions::new(dt, n_steps, DtoScheme::Imex, *inner);
            dto_trajectory(run_dto(&disc, &problem.theta0, 0.0, &opts)?)
        }
    };

    // per-step rows
    let mut steps = Vec::with_capacity(traj.thetas.len());
    let mut spectra = Vec::new();
    for (k, (t, th)) in traj.times.iter().zip(&traj.thetas).enumerate() {
        let (rank, ratio, norm_m, spectrum) = match &traj.otd_records {
            Some(recs) => {
                let r = &recs[k];
                (r.effective_rank, r.condition_ratio, r.norm_m, r.sigma_spectrum.clone())
            }
            None => {
                let gram = assemble_gram(problem.model.as_ref(), th, &problem.rule, problem.tau)?;
                let norm = disc.norm(&disc.values(th)?);
                (
                    gram.effective_rank(),
                    gram.condition_ratio(),
                    norm,
                    gram.singular_values.iter().copied().collect(),
                )
            }
        };
        if k % cfg.output.spectra_stride == 0 || k + 1 == traj.thetas.len() {
            spectra.push((k, spectrum));
        }
        let loss = match &problem.energy {
            Some(e) => Some(e.loss(problem.model.as_ref(), &ParamVector::new(th.clone(), problem.model.as_ref())?, &problem.rule)?),
            None => None,
        };
        let gn = traj.gn.as_ref().and_then(|g| if k == 0 { None } else { Some(g[k - 1]) });
        steps.push(StepRow {
            step: k,
            time: *t,
            norm_m,
            error: problem.error(*t, th)?,
            epsilon: traj.epsilons.as_ref().map(|e| e[k]),
            residual_norm: traj.residuals.as_ref().and_then(|r| if k == 0 { None } else { Some(r[k - 1]) }),
            gn_iterations: gn.map(|g| g.0),
            gn_converged: gn.map(|g| g.1),
            first_order_violation: gn.map(|g| g.2),
            effective_rank: rank,
            condition_ratio: ratio,
            loss,
            theta: th.clone(),
        });
    }

    let bounds = compute_bounds(cfg, &problem, &traj, &steps)?;

    let collapse = match cfg.problem {
        ProblemConfig::Collapse { .. } => Some(analyze_collapse(
            &disc,
            traj.times.clone(),
            traj.thetas.clone(),
            cfg.diagnostics.duplicate_tol,
            cfg.diagnostics.persistence_tol,
        )?),
        _ => None,
    };

    let summary = summarize(cfg, &problem, &steps, &bounds, collapse.as_ref(), clock.elapsed().as_secs_f64())?;
    Ok(RunOutcome {
        summary,
        steps,
        bounds,
        spectra,
        collapse,
    })
}

fn dto_trajectory(tr: crate::dto::DtoTrajectory) -> Trajectory {
    Trajectory {
        times: tr.times(),
        thetas: tr.thetas().map(<[f64]>::to_vec).collect(),
        epsilons: None,
        residuals: Some(tr.residual_norms()),
        gn: Some(
            tr.records
                .iter()
                .map(|r| (r.gn_iterations, r.gn_converged, r.first_order_violation))
                .collect(),
        ),
        otd_records: None,
    }
}

fn compute_bounds(cfg: &ExperimentConfig, problem: &Problem, traj: &Trajectory, steps: &[StepRow]) -> Result<Vec<BoundSeries>> {
    let k = problem.constants;
    let dt = cfg.time.dt;
    let errors: Option<Vec<f64>> = steps.iter().map(|s| s.error).collect();
    let norms: Vec<f64> = steps.iter().map(|s| s.norm_m).collect();
    let e0 = errors.as_ref().map_or(problem.initial_fit_residual, |e| e[0]);
    let mut out = Vec::new();
    let error_series = |name: &str, values: Vec<f64>, source: Option<TimeErrorSource>| BoundSeries {
        name: name.into(),
        measured: Measured::Error,
        values,
        observed: errors.clone(),
        applicable: true,
        time_error_source: source,
    };

    if let Some(records) = &traj.otd_records {
        out.push(error_series("otd-lipschitz", accumulate_bound_lipschitz(records, k.c, e0)?, None));
        if let Some(ls) = k.lambda_star {
            out.push(error_series("otd-laplacian", accumulate_bound_laplacian(records, k.c, ls, e0)?, None));
        }
        let tangent = problem.model.contains_self_in_tangent();
        out.push(BoundSeries {
            name: "otd-norm".into(),
            measured: Measured::Norm,
            values: stability_envelope(records, k.c, k.c0, None)?,
            observed: Some(norms.clone()),
            applicable: true,
            time_error_source: None,
        });
        if let Some(ls) = k.lambda_star {
            out.push(BoundSeries {
                name: "otd-norm-laplacian".into(),
                measured: Measured::Norm,
                values: stability_envelope(records, k.c, k.c0, Some(ls))?,
                observed: Some(norms.clone()),
                applicable: tangent,
                time_error_source: None,
            });
        }
    }

    if let Some(residuals) = &traj.residuals {
        let (kind, implicit) = match cfg.scheme {
            SchemeConfig::DtoGn { zeta: 1.0, .. } => (Some(TimeErrorKind::Explicit), false),
            SchemeConfig::DtoGn { zeta: 0.0, .. } => (Some(TimeErrorKind::Implicit), true),
            SchemeConfig::DtoImex { .. } => (Some(TimeErrorKind::Imex), true),
            _ => (None, false),
        };
        let time_errors = match (kind, cfg.bounds.time_error, &problem.reference) {
            (Some(kind), TimeErrorConfig::Oracle, Some(reference)) => Some((
                time_integration_errors(reference.as_ref(), &problem.discretization(), &traj.times, kind)?,
                TimeErrorSource::OracleAssisted,
            )),
            (Some(_), TimeErrorConfig::Assumed { value }, _) => {
                Some((vec![value; residuals.len()], TimeErrorSource::Assumed))
            }
            _ => None,
        };
        if let Some((ek, source)) = time_errors {
            let values = if implicit {
                accumulate_dto_bound_implicit(residuals, &ek, k.c, k.lambda_star.unwrap_or(0.0), dt, e0)?
            } else {
                accumulate_dto_bound_explicit(residuals, &ek, k.c, dt, e0)?
            };
            let name = if implicit { "dto-implicit" } else { "dto-explicit" };
            out.push(error_series(name, values, Some(source)));
        }
        let stationary_envelope = match cfg.scheme {
            SchemeConfig::DtoGn { zeta: 1.0, .. } => Some("dto-stationary"),
            SchemeConfig::DtoImex { .. } => Some("dto-imex-stationary"),
            _ => None,
        };
        if let Some(prefix) = stationary_envelope {
            require_tangent_membership(problem.model.as_ref())?;
            let tol = cfg.diagnostics.stationarity_tol;
            let stationary = traj.gn.as_ref().is_some_and(|g| g.iter().all(|s| s.2 <= tol));
            for &eps in &cfg.bounds.eps_param {
                out.push(BoundSeries {
                    name: format!("{prefix}-eps-{eps}"),
                    measured: Measured::NormSquared,
                    values: dto_stability_envelope(norms[0], residuals.len(), k.c, k.c0, dt, eps)?,
                    observed: Some(norms.iter().map(|n| n * n).collect()),
                    applicable: stationary,
                    time_error_source: None,
                });
            }
        }
    }
    Ok(out)
}

fn mean_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut n, mut sum, mut max) = (0usize, 0.0, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
    }
    (n > 0).then(|| (sum / n as f64, max))
}

fn summarize(
    cfg: &ExperimentConfig,
    problem: &Problem,
    steps: &[StepRow],
    bounds: &[BoundSeries],
    collapse: Option<&CollapseRun>,
    wall_time_s: f64,
) -> Result<RunSummary> {
    let last = steps.last().expect("at least the initial state");
    let eps = mean_max(steps.iter().filter_map(|s| s.epsilon));
    let res = mean_max(steps.iter().filter_map(|s| s.residual_norm));
    let bound_summaries: Vec<BoundSummary> = bounds
        .iter()
        .map(|b| BoundSummary {
            name: b.name.clone(),
            measured: b.measured,
            applicable: b.applicable,
            min_margin: b.margin(),
            final_value: *b.values.last().unwrap_or(&f64::NAN),
            time_error_source: b.time_error_source,
        })
        .collect();
    let min_margin = bound_summaries
        .iter()
        .filter(|b| b.applicable)
        .filter_map(|b| b.min_margin)
        .reduce(f64::min);
    Ok(RunSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash()?,
        problem: cfg.problem.name().into(),
        scheme: cfg.scheme.name().into(),
        n_params: problem.model.n_params(),
        n_steps: steps.len() - 1,
        dt: cfg.time.dt,
        t_final: last.time,
        reference: problem.reference.as_ref().map(|r| r.describe()),
        initial_fit_residual: problem.initial_fit_residual,
        initial_error: steps[0].error,
        final_error: last.error,
        max_error: steps.iter().filter_map(|s| s.error).reduce(f64::max),
        final_norm: last.norm_m,
        final_loss: last.loss,
        max_epsilon: eps.map(|e| e.1),
        mean_epsilon: eps.map(|e| e.0),
        max_residual: res.map(|r| r.1),
        mean_residual: res.map(|r| r.0),
        max_first_order_violation: steps.iter().filter_map(|s| s.first_order_violation).reduce(f64::max),
        unconverged_steps: steps.iter().filter(|s| s.gn_converged == Some(false)).count(),
        bounds: bound_summaries,
        min_bound_margin: min_margin,
        bounds_valid: min_margin.is_none_or(|m| m >= 0.0),
        collapse: collapse.map(|c| CollapseSummary {
            persistent: c.persistent(),
            first_break: c.first_break,
            rank_constant: c.rank_constant(),
            initial_rank: c.reports.first().map_or(0, |r| r.effective_rank),
            final_rank: c.reports.last().map_or(0, |r| r.effective_rank),
            n_initial_groups: c.initial_groups.len(),
        }),
        wall_time_s,
    })
}
