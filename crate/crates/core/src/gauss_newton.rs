//! Gauss-Newton with minimal-norm steps for weighted nonlinear least squares
//! `min_theta 1/2 |r(theta)|_M^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::{solve_least_squares, weighted_jacobian, QuadratureRule};

/// A residual `r(theta)` sampled at quadrature nodes.
pub trait ResidualModel {
    /// Node residual.
    fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// Node residual and its `p x n` parameter Jacobian.
    fn linearize(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussNewtonOptions {
    /// iteration budget `L`
    pub max_iterations: usize,
    /// step size `alpha` in `(0, 1]`
    pub step_size: f64,
    /// Armijo backtracking on the residual M-norm
    pub line_search: bool,
    /// stop once `|<grad r, r>_M| < tolerance * |<grad r, r>_M|` at the start
    pub tolerance: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            step_size: 1.0,
            line_search: true,
            tolerance: 1e-9,
        }
    }
}

impl GaussNewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("scheme.iterations", "need at least one Gauss-Newton iteration"));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::config("scheme.step_size", "must lie in (0, 1]"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("scheme.tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussNewtonOutcome {
    pub theta: DVector<f64>,
    /// accepted updates
    pub iterations: usize,
    pub converged: bool,
    /// `|r|_M` at the returned iterate
    pub residual_norm: f64,
    /// `|<grad r, r>_M|` at the returned iterate
    pub first_order_violation: f64,
    /// `|r|_M` at the start and after each accepted update
    pub residual_history: Vec<f64>,
    /// rank of the last linearized solve
    pub last_rank: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Runs Gauss-Newton from `theta0`. Each update is
/// `delta = -alpha * J^+ r` with the truncated minimal-norm pseudo-inverse.
pub fn gauss_newton(
    problem: &dyn ResidualModel,
    theta0: &DVector<f64>,
    rule: &QuadratureRule,
    tau: f64,
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonOutcome> {
    opts.validate()?;
    let sw = rule.sqrt_weights();
    let mut theta = theta0.clone();
    let (mut r, mut jac) = problem.linearize(&theta)?;
    let mut rw = r.component_mul(sw);
    let mut jw = weighted_jacobian(&jac, rule);
    let mut grad = jw.transpose() * &rw;
    let g0 = grad.norm();
    let mut history = vec![rw.norm()];
    let mut iterations = 0;
    let mut last_rank = 0;
    let mut stalled = false;
    let done = |g: f64, it: usize| g == 0.0 || (it > 0 && g < opts.tolerance * g0);
    while iterations < opts.max_iterations && !done(grad.norm(), iterations) {
        let sol = solve_least_squares(&jw, &rw, tau)?;
        last_rank = sol.rank;
        let delta = -(sol.x * opts.step_size);
        let mut candidate = &theta + &delta;
        if opts.line_search {
            let phi0 = 0.5 * rw.norm_squared();
            let slope = grad.dot(&delta);
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                if candidate.iter().all(|v| v.is_finite()) {
                    if let Ok(rc) = problem.residual(&candidate) {
                        let phi = 0.5 * rc.component_mul(sw).norm_squared();
                        if phi.is_finite() && phi <= phi0 + ARMIJO_C1 * s * slope {
                            accepted = true;
                            break;
                        }
                    }
                }
                s *= 0.5;
                candidate = &theta + &delta * s;
            }
            if !accepted {
                stalled = true;
                break;
            }
        }
        ensure_finite(candidate.as_slice(), "Gauss-Newton iterate")?;
        theta = candidate;
        iterations += 1;
        (r, jac) = problem.linearize(&theta)?;
        rw = r.component_mul(sw);
        jw = weighted_jacobian(&jac, rule);
        grad = jw.transpose() * &rw;
        history.push(rw.norm());
    }
    let violation = grad.norm();
    Ok(GaussNewtonOutcome {
        theta,
        iterations,
        converged: !stalled && done(violation, iterations),
        residual_norm: rw.norm(),
        first_order_violation: violation,
        residual_history: history,
        last_rank,
    })
}
