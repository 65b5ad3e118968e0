//! Optimize-then-discretize steppers: the parameter velocity solves the
//! projected least-squares problem `min_eta |grad_theta u . eta - f|_M`, then
//! an Euler-type scheme advances `theta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{Discretization, SingularPolicy};
use crate::error::{Error, Result};
use crate::gauss_newton::{gauss_newton, GaussNewtonOptions, ResidualModel};
use crate::models::{hessian_vec, JetOrder, ParamVector};
use crate::pde::RhsPart;
use crate::quadrature::{condition_ratio, effective_rank, solve_least_squares};

/// Per-step state of an OtD trajectory, evaluated at `(t_k, theta_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtdStepRecord {
    pub step: usize,
    pub time: f64,
    pub theta: Vec<f64>,
    /// `|f - P_theta f|_M`
    pub epsilon: f64,
    /// `|f|_M`
    pub rhs_norm: f64,
    /// `|P_theta f|_M`
    pub projected_norm: f64,
    /// descending singular values of the Gram matrix
    pub sigma_spectrum: Vec<f64>,
    pub effective_rank: usize,
    pub condition_ratio: f64,
    /// `|u(theta_k)|_M`
    pub norm_m: f64,
    pub bound_lipschitz: Option<f64>,
    pub bound_laplacian: Option<f64>,
    pub stability_bound: Option<f64>,
    pub stability_bound_laplacian: Option<f64>,
    /// inner Gauss-Newton iterations of an implicit step, zero otherwise
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

/// Projection of node values `rhs` onto the tangent span at a snapshot.
#[derive(Debug, Clone)]
pub struct Projection {
    /// coefficients of the projection in the gradient components
    pub eta: DVector<f64>,
    pub residual_norm: f64,
    pub projected_norm: f64,
    pub rhs_norm: f64,
    pub gram_spectrum: Vec<f64>,
    pub rank: usize,
}

fn project(disc: &Discretization, d_theta: &DMatrix<f64>, rhs: &DVector<f64>, scale: f64) -> Result<Projection> {
    let jw = disc.weighted_jacobian(d_theta);
    let b = (rhs * scale).component_mul(disc.rule.sqrt_weights());
    let ls = solve_least_squares(&jw, &b, disc.tau)?;
    let fitted = &jw * &ls.x;
    Ok(Projection {
        rank: ls.rank,
        gram_spectrum: ls.gram_spectrum(),
        residual_norm: ls.residual_norm,
        projected_norm: fitted.norm(),
        rhs_norm: b.norm(),
        eta: ls.x,
    })
}

/// `|rhs - P_theta rhs|_M`: least-squares residual of projecting node values
/// onto the span of the gradient components.
pub fn estimate_projection_error(disc: &Discretization, theta: &ParamVector, rhs_vals: &DVector<f64>) -> Result<f64> {
    theta.check(disc.model)?;
    let snap = disc.snapshot(theta.as_slice(), JetOrder::Theta)?;
    disc.rule.weighted(rhs_vals)?;
    Ok(project(disc, &snap.d_theta, rhs_vals, 1.0)?.residual_norm)
}

fn record_from(
    step: usize,
    time: f64,
    theta: &ParamVector,
    proj: &Projection,
    scale: f64,
    norm_m: f64,
    tau: f64,
) -> OtdStepRecord {
    OtdStepRecord {
        step,
        time,
        theta: theta.to_vec(),
        epsilon: proj.residual_norm / scale,
        rhs_norm: proj.rhs_norm / scale,
        projected_norm: proj.projected_norm / scale,
        effective_rank: effective_rank(&proj.gram_spectrum, tau),
        condition_ratio: condition_ratio(&proj.gram_spectrum),
        sigma_spectrum: proj.gram_spectrum.clone(),
        norm_m,
        bound_lipschitz: None,
        bound_laplacian: None,
        stability_bound: None,
        stability_bound_laplacian: None,
        inner_iterations: 0,
        inner_converged: true,
    }
}

fn check_rank(policy: SingularPolicy, step: usize, rank: usize, p: usize) -> Result<()> {
    if policy == SingularPolicy::Error && rank < p {
        return Err(Error::RankDeficient {
            step,
            rank,
            n_params: p,
        });
    }
    Ok(())
}

fn finite_or_diverged(theta: DVector<f64>, step: usize, time: f64, last: &ParamVector) -> Result<ParamVector> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(ParamVector::from_vector(theta))
    } else {
        Err(Error::Divergence {
            step,
            time,
            message: "non-finite parameter update".into(),
            last_theta: last.to_vec(),
        })
    }
}

/// State record at `(t, theta)` without stepping.
pub fn otd_record(disc: &Discretization, step: usize, t: f64, theta: &ParamVector) -> Result<OtdStepRecord> {
    theta.check(disc.model)?;
    let snap = disc.snapshot(theta.as_slice(), disc.rhs.required_order(false))?;
    let f = disc.rhs_at(t, &snap)?;
    let proj = project(disc, &snap.d_theta, &f, 1.0)?;
    Ok(record_from(step, t, theta, &proj, 1.0, disc.norm(&snap.values), disc.tau))
}

/// Explicit Euler: `theta_{k+1} = theta_k + argmin_eta |J eta - dt f(t_k)|`.
pub fn otd_step_explicit(
    disc: &Discretization,
    step: usize,
    theta: &ParamVector,
    t: f64,
    dt: f64,
    policy: SingularPolicy,
) -> Result<(ParamVector, OtdStepRecord)> {
    theta.check(disc.model)?;
    let snap = disc.snapshot(theta.as_slice(), disc.rhs.required_order(false))?;
    let f = disc.rhs_at(t, &snap)?;
    let proj = project(disc, &snap.d_theta, &f, dt)?;
    check_rank(policy, step, proj.rank, disc.n_params())?;
    let next = finite_or_diverged(theta.vector() + &proj.eta, step, t, theta)?;
    let record = record_from(step, t, theta, &proj, dt, disc.norm(&snap.values), disc.tau);
    Ok((next, record))
}

/// Residual of the zeta-scheme
/// `R(theta) = grad_theta u(theta)^T (theta - theta_k) - dt [zeta f_k + (1 - zeta) f(t_{k+1}, theta)]`.
struct ZetaResidual<'a, 'b> {
    disc: &'a Discretization<'b>,
    theta_k: DVector<f64>,
    /// `dt zeta f(t_k, theta_k)`
    explicit_part: DVector<f64>,
    t_next: f64,
    /// `dt (1 - zeta)`
    implicit_weight: f64,
}

impl ResidualModel for ZetaResidual<'_, '_> {
    fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let order = self.disc.rhs.required_order(false).max(JetOrder::Theta);
        let snap = self.disc.snapshot(theta.as_slice(), order)?;
        let step = theta - &self.theta_k;
        let mut r = snap.d_theta.transpose() * &step - &self.explicit_part;
        if self.implicit_weight != 0.0 {
            r -= self.disc.rhs_at(self.t_next, &snap)? * self.implicit_weight;
        }
        Ok(r)
    }

    fn linearize(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let snap = self.disc.snapshot(theta.as_slice(), self.disc.rhs.required_order(true))?;
        let step = theta - &self.theta_k;
        let mut r = snap.d_theta.transpose() * &step - &self.explicit_part;
        let mut jac = &snap.d_theta + hessian_vec(self.disc.model, theta.as_slice(), step.as_slice(), self.disc.rule.nodes())?;
        if self.implicit_weight != 0.0 {
            r -= self.disc.rhs_at(self.t_next, &snap)? * self.implicit_weight;
            jac -= self.disc.rhs_jacobian_at(self.t_next, &snap, RhsPart::Full)? * self.implicit_weight;
        }
        Ok((r, jac))
    }
}

/// zeta-scheme step; `zeta = 1` is exactly [`otd_step_explicit`], `zeta < 1`
/// solves the blended objective by Gauss-Newton starting at `theta_k`.
#[allow(clippy::too_many_arguments)]
pub fn otd_step_zeta(
    disc: &Discretization,
    step: usize,
    theta: &ParamVector,
    t: f64,
    dt: f64,
    zeta: f64,
    inner: &GaussNewtonOptions,
    policy: SingularPolicy,
) -> Result<(ParamVector, OtdStepRecord)> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::config("scheme.zeta", format!("must lie in [0, 1], got {zeta}")));
    }
    if zeta == 1.0 {
        return otd_step_explicit(disc, step, theta, t, dt, policy);
    }
    theta.check(disc.model)?;
    let mut record = otd_record(disc, step, t, theta)?;
    check_rank(policy, step, record.effective_rank, disc.n_params())?;
    let explicit_part = if zeta == 0.0 {
        DVector::zeros(disc.rule.len())
    } else {
        let snap = disc.snapshot(theta.as_slice(), disc.rhs.required_order(false))?;
        disc.rhs_at(t, &snap)? * (dt * zeta)
    };
    let problem = ZetaResidual {
        disc,
        theta_k: theta.vector().clone(),
        explicit_part,
        t_next: t + dt,
        implicit_weight: dt * (1.0 - zeta),
    };
    let out = gauss_newton(&problem, theta.vector(), disc.rule, disc.tau, inner)?;
    record.inner_iterations = out.iterations;
    record.inner_converged = out.converged;
    let next = finite_or_diverged(out.theta, step, t, theta)?;
    Ok((next, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtdOptions {
    pub dt: f64,
    pub n_steps: usize,
    /// 1 = explicit Euler, 0 = implicit Euler
    pub zeta: f64,
    pub inner: GaussNewtonOptions,
    pub singular_policy: SingularPolicy,
}

impl OtdOptions {
    pub fn explicit(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            zeta: 1.0,
            inner: GaussNewtonOptions::default(),
            singular_policy: SingularPolicy::MinNorm,
        }
    }
}

/// Records `0..=K`; record `K` holds the final state without a step.
#[derive(Debug, Clone)]
pub struct OtdTrajectory {
    pub records: Vec<OtdStepRecord>,
}

impl OtdTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.epsilon).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.norm_m).collect()
    }

    pub fn final_theta(&self) -> ParamVector {
        ParamVector::from_vector(DVector::from_vec(self.records.last().expect("non-empty").theta.clone()))
    }

    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        self.records.iter().map(|r| r.theta.as_slice())
    }
}

/// Runs `n_steps` OtD steps from `(t0, theta0)`.
pub fn run_otd(disc: &Discretization, theta0: &ParamVector, t0: f64, opts: &OtdOptions) -> Result<OtdTrajectory> {
    if !(opts.dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    let mut records = Vec::with_capacity(opts.n_steps + 1);
    let mut theta = theta0.clone();
    for k in 0..opts.n_steps {
        let t = t0 + k as f64 * opts.dt;
        let (next, rec) = otd_step_zeta(disc, k, &theta, t, opts.dt, opts.zeta, &opts.inner, opts.singular_policy)?;
        records.push(rec);
        theta = next;
    }
    let t_end = t0 + opts.n_steps as f64 * opts.dt;
    records.push(otd_record(disc, opts.n_steps, t_end, &theta)?);
    Ok(OtdTrajectory { records })
}

/// `B_k = e^{C t_k} (e0 + int_0^{t_k} e^{-C s} eps(s) ds)` with the integral by
/// the trapezoid rule on the sample times.
pub fn error_bound_series(times: &[f64], eps: &[f64], c: f64, e0: f64) -> Vec<f64> {
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        if k > 0 {
            let (a, b) = (times[k - 1] - t0, times[k] - t0);
            integral += 0.5 * (b - a) * ((-c * a).exp() * eps[k - 1] + (-c * b).exp() * eps[k]);
        }
        out.push((c * (times[k] - t0)).exp() * (e0 + integral));
    }
    out
}

/// Grönwall bound for a Lipschitz right-hand side with constant `c >= 0`.
pub fn accumulate_bound_lipschitz(records: &[OtdStepRecord], c: f64, e0: f64) -> Result<Vec<f64>> {
    if !(c >= 0.0) {
        return Err(Error::config("bounds.c", "Lipschitz constant must be non-negative"));
    }
    let (t, e) = times_and_eps(records);
    Ok(error_bound_series(&t, &e, c, e0))
}

/// Grönwall bound for `f = Laplace u + g` with exponent `c - lambda_star`.
pub fn accumulate_bound_laplacian(records: &[OtdStepRecord], c: f64, lambda_star: f64, e0: f64) -> Result<Vec<f64>> {
    if !(c >= 0.0 && lambda_star > 0.0) {
        return Err(Error::config("bounds", "need c >= 0 and lambda_star > 0"));
    }
    let (t, e) = times_and_eps(records);
    Ok(error_bound_series(&t, &e, c - lambda_star, e0))
}

fn times_and_eps(records: &[OtdStepRecord]) -> (Vec<f64>, Vec<f64>) {
    records.iter().map(|r| (r.time, r.epsilon)).unzip()
}

/// `|u0| e^{c t} + (c0 / c)(e^{c t} - 1)`, continuous at `c = 0`.
pub fn norm_envelope(norm0: f64, c: f64, c0: f64, t: f64) -> f64 {
    let x = c * t;
    let growth = if x.abs() < 1e-12 { t } else { t * x.exp_m1() / x };
    norm0 * x.exp() + c0 * growth
}

/// Norm-growth envelope over the record times; with `lambda_star` the
/// exponent is `c - lambda_star`.
pub fn stability_envelope(records: &[OtdStepRecord], c: f64, c0: f64, lambda_star: Option<f64>) -> Result<Vec<f64>> {
    if !(c >= 0.0 && c0 >= 0.0) {
        return Err(Error::config("bounds", "need c >= 0 and c0 >= 0"));
    }
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let rate = c - lambda_star.unwrap_or(0.0);
    Ok(records
        .iter()
        .map(|r| norm_envelope(first.norm_m, rate, c0, r.time - first.time))
        .collect())
}

/// Search range and blow-up criteria for [`explicit_blowup_threshold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupSearch {
    pub n_steps: usize,
    pub lo: f64,
    pub hi: f64,
    /// blow-up once `|u|_M > norm_growth * |u_0|_M`
    pub norm_growth: f64,
    /// blow-up once `|theta|_inf > param_growth * (1 + |theta_0|_inf)`
    pub param_growth: f64,
    /// relative width of the final bracket
    pub rel_tol: f64,
}

/// Adjacent step sizes with `stable / unstable >= 1 / (1 + rel_tol)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupBracket {
    pub stable: f64,
    pub unstable: f64,
}

/// Brackets the first `dt` in `[lo, hi]` at which `n_steps` explicit steps
/// blow up: divergence, norm growth, or parameter runaway. Scans upward by
/// doubling, then bisects the first unstable bracket. Returns `None` when no
/// scanned step blows up; a blow-up already at `lo` gives `stable = 0`.
pub fn explicit_blowup_threshold(
    disc: &Discretization,
    theta0: &ParamVector,
    search: &BlowupSearch,
) -> Result<Option<BlowupBracket>> {
    let BlowupSearch {
        n_steps,
        lo,
        hi,
        norm_growth,
        param_growth,
        rel_tol,
    } = *search;
    if !(lo > 0.0 && hi > lo && rel_tol > 0.0) {
        return Err(Error::config("blowup", "need 0 < lo < hi and rel_tol > 0"));
    }
    let norm0 = disc.norm(&disc.values(theta0.as_slice())?);
    let param_limit = param_growth * (1.0 + theta0.amax());
    let blows_up = |dt: f64| -> Result<bool> {
        match run_otd(disc, theta0, 0.0, &OtdOptions::explicit(dt, n_steps)) {
            Ok(tr) => Ok(tr.records.iter().any(|r| {
                !r.norm_m.is_finite() || r.norm_m > norm_growth * norm0 || r.theta.iter().any(|v| v.abs() > param_limit)
            })),
            Err(Error::Divergence { .. } | Error::NonFinite { .. } | Error::LinearAlgebra(_)) => Ok(true),
            Err(e) => Err(e),
        }
    };
    if blows_up(lo)? {
        return Ok(Some(BlowupBracket {
            stable: 0.0,
            unstable: lo,
        }));
    }
    let mut stable = lo;
    let mut unstable = loop {
        let next = (2.0 * stable).min(hi);
        if blows_up(next)? {
            break next;
        }
        if next >= hi {
            return Ok(None);
        }
        stable = next;
    };
    while unstable / stable > 1.0 + rel_tol {
        let mid = (stable * unstable).sqrt();
        if blows_up(mid)? {
            unstable = mid;
        } else {
            stable = mid;
        }
    }
    Ok(Some(BlowupBracket { stable, unstable }))
}
