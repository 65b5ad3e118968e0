//! Discretize-then-optimize steppers: each step minimizes the M-norm of a
//! time-discrete residual over the parameters with Gauss-Newton.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::gauss_newton::{gauss_newton, GaussNewtonOptions, ResidualModel};
use crate::models::{JetOrder, ModelSnapshot, ParamVector, Parametrization};
use crate::pde::{ReferenceSolution, RhsPart, StiffPart};
use crate::quadrature::QuadratureRule;

/// Time discretization of the DtO residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DtoScheme {
    /// `u(theta) - u_k - dt [zeta f(t_k, u_k) + (1 - zeta) f(t_{k+1}, u(theta))]`
    Zeta { zeta: f64 },
    /// `u(theta) - u_k - dt Laplace u(theta) - dt g(t_k, u_k)`
    Imex,
}

impl DtoScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DtoScheme::Zeta { zeta } if !(0.0..=1.0).contains(&zeta) => {
                Err(Error::config("scheme.zeta", format!("must lie in [0, 1], got {zeta}")))
            }
            _ => Ok(()),
        }
    }
}

/// State after step `k`, i.e. at `(t_{k+1}, theta_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtoStepRecord {
    pub step: usize,
    pub time: f64,
    pub theta: Vec<f64>,
    /// `|r_k(theta_{k+1})|_M`
    pub residual_norm: f64,
    pub gn_iterations: usize,
    pub gn_converged: bool,
    /// `|<grad_theta r, r>_M|` at `theta_{k+1}`
    pub first_order_violation: f64,
    /// `|r|_M` at the start and after every accepted inner update
    pub residual_history: Vec<f64>,
    pub norm_m: f64,
    pub bound_explicit: Option<f64>,
    pub bound_implicit: Option<f64>,
    /// squared-norm envelope
    pub stability_bound: Option<f64>,
}

struct DtoResidual<'a, 'b> {
    disc: &'a Discretization<'b>,
    scheme: DtoScheme,
    previous: DVector<f64>,
    /// everything evaluated at `(t_k, theta_k)`, already scaled by `dt`
    explicit_part: DVector<f64>,
    t_next: f64,
    dt: f64,
}

impl DtoResidual<'_, '_> {
    fn implicit_weight(&self) -> f64 {
        match self.scheme {
            DtoScheme::Zeta { zeta } => self.dt * (1.0 - zeta),
            DtoScheme::Imex => self.dt,
        }
    }

    fn order(&self, jacobian: bool) -> JetOrder {
        let base = if jacobian { JetOrder::Theta } else { JetOrder::Value };
        if self.implicit_weight() == 0.0 {
            return base;
        }
        match self.scheme {
            DtoScheme::Zeta { .. } => self.disc.rhs.required_order(jacobian).max(base),
            DtoScheme::Imex if jacobian => JetOrder::Mixed,
            DtoScheme::Imex => JetOrder::Spatial,
        }
    }

    fn residual_from(&self, snap: &ModelSnapshot) -> Result<DVector<f64>> {
        let mut r = (&snap.values - &self.previous) - &self.explicit_part;
        let w = self.implicit_weight();
        if w != 0.0 {
            match self.scheme {
                DtoScheme::Zeta { .. } => r -= self.disc.rhs_at(self.t_next, snap)? * w,
                DtoScheme::Imex => r -= &snap.laplacian * w,
            }
        }
        Ok(r)
    }
}

impl ResidualModel for DtoResidual<'_, '_> {
    fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let snap = self.disc.snapshot(theta.as_slice(), self.order(false))?;
        self.residual_from(&snap)
    }

    fn linearize(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let snap = self.disc.snapshot(theta.as_slice(), self.order(true))?;
        let r = self.residual_from(&snap)?;
        let w = self.implicit_weight();
        if w == 0.0 {
            return Ok((r, snap.d_theta));
        }
        let coupling = match self.scheme {
            DtoScheme::Zeta { .. } => self.disc.rhs_jacobian_at(self.t_next, &snap, RhsPart::Full)?,
            DtoScheme::Imex => snap.d_theta_laplacian.clone(),
        };
        Ok((r, snap.d_theta - coupling * w))
    }
}

fn build_residual<'a, 'b>(
    disc: &'a Discretization<'b>,
    theta_k: &ParamVector,
    t: f64,
    dt: f64,
    scheme: DtoScheme,
) -> Result<DtoResidual<'a, 'b>> {
    scheme.validate()?;
    theta_k.check(disc.model)?;
    let explicit_part = match scheme {
        DtoScheme::Zeta { zeta: 0.0 } => DVector::zeros(disc.rule.len()),
        DtoScheme::Zeta { zeta } => {
            let snap = disc.snapshot(theta_k.as_slice(), disc.rhs.required_order(false))?;
            disc.rhs_at(t, &snap)? * (dt * zeta)
        }
        DtoScheme::Imex => {
            if disc.rhs.stiff() != StiffPart::Laplacian {
                return Err(Error::config("scheme", "the IMEX scheme needs a Laplacian stiff part"));
            }
            let snap = disc.snapshot(theta_k.as_slice(), disc.rhs.required_order(false))?;
            disc.rhs_part_at(t, &snap, RhsPart::Bounded)? * dt
        }
    };
    Ok(DtoResidual {
        disc,
        scheme,
        previous: disc.values(theta_k.as_slice())?,
        explicit_part,
        t_next: t + dt,
        dt,
    })
}

/// Node values of the DtO residual `r_k(theta)`.
pub fn dto_residual(
    disc: &Discretization,
    theta: &ParamVector,
    theta_k: &ParamVector,
    t: f64,
    dt: f64,
    scheme: DtoScheme,
) -> Result<DVector<f64>> {
    theta.check(disc.model)?;
    build_residual(disc, theta_k, t, dt, scheme)?.residual(theta.vector())
}

/// `p x n` parameter Jacobian of [`dto_residual`] at `theta`.
pub fn dto_residual_jacobian(
    disc: &Discretization,
    theta: &ParamVector,
    theta_k: &ParamVector,
    t: f64,
    dt: f64,
    scheme: DtoScheme,
) -> Result<DMatrix<f64>> {
    theta.check(disc.model)?;
    Ok(build_residual(disc, theta_k, t, dt, scheme)?.linearize(theta.vector())?.1)
}

/// Uniform perturbation in `[-size, size]` of the Gauss-Newton starting
/// iterate, seeded per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartJitter {
    pub size: f64,
    pub seed: u64,
}

impl StartJitter {
    fn apply(&self, theta: &DVector<f64>, step: usize) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(step as u64));
        theta.map(|v| v + self.size * rng.gen_range(-1.0..=1.0))
    }
}

/// One DtO step from `(t, theta_k)` started at `theta_k` (plus optional jitter).
#[allow(clippy::too_many_arguments)]
pub fn dto_gauss_newton_solve(
    disc: &Discretization,
    step: usize,
    theta_k: &ParamVector,
    t: f64,
    dt: f64,
    scheme: DtoScheme,
    inner: &GaussNewtonOptions,
    jitter: Option<StartJitter>,
) -> Result<(ParamVector, DtoStepRecord)> {
    let problem = build_residual(disc, theta_k, t, dt, scheme)?;
    let start = match jitter {
        Some(j) => j.apply(theta_k.vector(), step),
        None => theta_k.vector().clone(),
    };
    let out = gauss_newton(&problem, &start, disc.rule, disc.tau, inner).map_err(|e| match e {
        Error::NonFinite { what, .. } => Error::Divergence {
            step,
            time: t,
            message: format!("non-finite {what}"),
            last_theta: theta_k.to_vec(),
        },
        other => other,
    })?;
    let next = ParamVector::from_vector(out.theta);
    let norm_m = disc.norm(&disc.values(next.as_slice())?);
    let record = DtoStepRecord {
        step,
        time: t + dt,
        theta: next.to_vec(),
        residual_norm: out.residual_norm,
        gn_iterations: out.iterations,
        gn_converged: out.converged,
        first_order_violation: out.first_order_violation,
        residual_history: out.residual_history,
        norm_m,
        bound_explicit: None,
        bound_implicit: None,
        stability_bound: None,
    };
    Ok((next, record))
}

/// IMEX step: Laplacian implicit, bounded part explicit.
pub fn dto_step_imex(
    disc: &Discretization,
    step: usize,
    theta_k: &ParamVector,
    t: f64,
    dt: f64,
    inner: &GaussNewtonOptions,
) -> Result<(ParamVector, DtoStepRecord)> {
    dto_gauss_newton_solve(disc, step, theta_k, t, dt, DtoScheme::Imex, inner, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtoOptions {
    pub dt: f64,
    pub n_steps: usize,
    pub scheme: DtoScheme,
    pub inner: GaussNewtonOptions,
    pub jitter: Option<StartJitter>,
}

impl DtoOptions {
    pub fn new(dt: f64, n_steps: usize, scheme: DtoScheme, inner: GaussNewtonOptions) -> Self {
        Self {
            dt,
            n_steps,
            scheme,
            inner,
            jitter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DtoTrajectory {
    pub t0: f64,
    pub theta0: Vec<f64>,
    pub norm0: f64,
    /// `records[k]` is the state at `t_{k+1}`
    pub records: Vec<DtoStepRecord>,
}

impl DtoTrajectory {
    /// `t_0, ..., t_K`
    pub fn times(&self) -> Vec<f64> {
        std::iter::once(self.t0).chain(self.records.iter().map(|r| r.time)).collect()
    }

    /// `theta_0, ..., theta_K`
    pub fn thetas(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.theta0.as_slice()).chain(self.records.iter().map(|r| r.theta.as_slice()))
    }

    /// `|u(theta_k)|_M` for `k = 0..=K`
    pub fn norms(&self) -> Vec<f64> {
        std::iter::once(self.norm0).chain(self.records.iter().map(|r| r.norm_m)).collect()
    }

    pub fn residual_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual_norm).collect()
    }

    pub fn final_theta(&self) -> ParamVector {
        let last = self.records.last().map_or(&self.theta0, |r| &r.theta);
        ParamVector::from_vector(DVector::from_vec(last.clone()))
    }
}

pub fn run_dto(disc: &Discretization, theta0: &ParamVector, t0: f64, opts: &DtoOptions) -> Result<DtoTrajectory> {
    if !(opts.dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    opts.scheme.validate()?;
    opts.inner.validate()?;
    theta0.check(disc.model)?;
    let norm0 = disc.norm(&disc.values(theta0.as_slice())?);
    let mut theta = theta0.clone();
    let mut records = Vec::with_capacity(opts.n_steps);
    for k in 0..opts.n_steps {
        let t = t0 + k as f64 * opts.dt;
        let (next, rec) = dto_gauss_newton_solve(disc, k, &theta, t, opts.dt, opts.scheme, &opts.inner, opts.jitter)?;
        records.push(rec);
        theta = next;
    }
    Ok(DtoTrajectory {
        t0,
        theta0: theta0.to_vec(),
        norm0,
        records,
    })
}

/// How the time-integration error entering the DtO bounds was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeErrorSource {
    /// assembled from a reference solution
    OracleAssisted,
    /// a user-supplied constant
    Assumed,
}

/// Which Euler variant defines the time-integration error `e_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeErrorKind {
    /// `u_{k+1} - u_k - dt f(t_k, u_k)`
    Explicit,
    /// `u_{k+1} - u_k - dt f(t_{k+1}, u_{k+1})`
    Implicit,
    /// `u_{k+1} - u_k - dt Laplace u_{k+1} - dt g(t_k, u_k)`
    Imex,
}

/// `|e_k|_M` for consecutive `times`, assembled from the reference solution.
pub fn time_integration_errors(
    reference: &dyn ReferenceSolution,
    disc: &Discretization,
    times: &[f64],
    kind: TimeErrorKind,
) -> Result<Vec<f64>> {
    let nodes = disc.rule.nodes();
    let rhs = disc.rhs;
    let mut samples: Vec<_> = Vec::with_capacity(times.len());
    for &t in times {
        samples.push(reference.sample(t, nodes)?);
    }
    times
        .windows(2)
        .zip(samples.windows(2))
        .map(|(t, s)| {
            let dt = t[1] - t[0];
            let mut e = &s[1].values - &s[0].values;
            match kind {
                TimeErrorKind::Explicit => e -= rhs.eval_field(t[0], nodes, &s[0], RhsPart::Full)? * dt,
                TimeErrorKind::Implicit => e -= rhs.eval_field(t[1], nodes, &s[1], RhsPart::Full)? * dt,
                TimeErrorKind::Imex => {
                    e -= rhs.eval_field(t[1], nodes, &s[1], RhsPart::Stiff)? * dt;
                    e -= rhs.eval_field(t[0], nodes, &s[0], RhsPart::Bounded)? * dt;
                }
            }
            Ok(disc.norm(&e))
        })
        .collect()
}

fn check_lengths(residuals: &[f64], time_errors: &[f64]) -> Result<()> {
    if residuals.len() != time_errors.len() {
        return Err(Error::config(
            "bounds",
            format!("{} residual norms but {} time-integration errors", residuals.len(), time_errors.len()),
        ));
    }
    Ok(())
}

/// `B_0 = e0`, `B_{k+1} = (1 + C dt) B_k + |e_k| + |r_k|`; returns `B_0..=B_K`.
pub fn accumulate_dto_bound_explicit(
    residuals: &[f64],
    time_errors: &[f64],
    c: f64,
    dt: f64,
    e0: f64,
) -> Result<Vec<f64>> {
    check_lengths(residuals, time_errors)?;
    if !(c >= 0.0 && dt > 0.0) {
        return Err(Error::config("bounds", "need c >= 0 and dt > 0"));
    }
    let growth = 1.0 + c * dt;
    Ok(recurse(e0, residuals, time_errors, |b, inc| growth * b + inc))
}

/// `B_{k+1} = (B_k + |e_k| + |r_k|) / (1 + (lambda_star - C) dt)`; returns `B_0..=B_K`.
pub fn accumulate_dto_bound_implicit(
    residuals: &[f64],
    time_errors: &[f64],
    c: f64,
    lambda_star: f64,
    dt: f64,
    e0: f64,
) -> Result<Vec<f64>> {
    check_lengths(residuals, time_errors)?;
    let denom = 1.0 + (lambda_star - c) * dt;
    if !(denom > 0.0) {
        return Err(Error::config(
            "bounds",
            format!("1 + (lambda_star - c) dt > 0 fails: got {denom}"),
        ));
    }
    let q = 1.0 / denom;
    Ok(recurse(e0, residuals, time_errors, |b, inc| q * (b + inc)))
}

fn recurse(e0: f64, residuals: &[f64], time_errors: &[f64], step: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(residuals.len() + 1);
    let mut b = e0;
    out.push(b);
    for (r, e) in residuals.iter().zip(time_errors) {
        b = step(b, r + e);
        out.push(b);
    }
    out
}

/// Squared-norm envelope at stationary points, `S_0..=S_K`:
/// `rho^k |u_0|^2 + (rho^k - 1) 2 C0^2 / (2 C^2 + eps^2)` with
/// `rho = (1 + 2 C^2 dt / eps) / (1 - eps dt)`.
pub fn dto_stability_envelope(norm0: f64, n_steps: usize, c: f64, c0: f64, dt: f64, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::config("bounds.eps", "must be positive"));
    }
    if !(1.0 - eps * dt > 0.0) {
        return Err(Error::config("bounds.eps", format!("1 - eps dt > 0 fails for eps = {eps}, dt = {dt}")));
    }
    if !(c >= 0.0 && c0 >= 0.0) {
        return Err(Error::config("bounds", "need c >= 0 and c0 >= 0"));
    }
    let rho = (1.0 + 2.0 * c * c * dt / eps) / (1.0 - eps * dt);
    let offset = 2.0 * c0 * c0 / (2.0 * c * c + eps * eps);
    Ok((0..=n_steps)
        .map(|k| {
            let rk = rho.powi(k as i32);
            rk * norm0 * norm0 + (rk - 1.0) * offset
        })
        .collect())
}

/// Rejects models whose span of gradient components is not known to contain
/// the model itself.
pub fn require_tangent_membership(model: &dyn Parametrization) -> Result<()> {
    if model.contains_self_in_tangent() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "{} does not contain its own value in its tangent space",
            model.describe()
        )))
    }
}

/// `|u - P_theta u|_M / |u|_M`, zero for models passing
/// [`require_tangent_membership`].
pub fn tangent_membership_defect(model: &dyn Parametrization, theta: &ParamVector, rule: &QuadratureRule, tau: f64) -> Result<f64> {
    let zero = crate::pde::RhsOperator::new(
        crate::domain::BoxDomain::unit(model.dim()),
        StiffPart::None,
        crate::pde::BoundedPart::Zero,
        0.0,
        0.0,
    )?;
    let disc = Discretization::new(model, rule, &zero, tau);
    let values = disc.values(theta.as_slice())?;
    let norm = disc.norm(&values);
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(crate::otd::estimate_projection_error(&disc, theta, &values)? / norm)
}
