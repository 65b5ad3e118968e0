use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::field::{Field, FieldSamples, SineMode};
use super::{RhsOperator, RhsPart};
use crate::domain::{BoxDomain, PointSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Analytic,
    FineGrid,
}

/// An accurate stand-in for the exact PDE solution `u(t, .)`.
pub trait ReferenceSolution: Send + Sync + fmt::Debug {
    fn kind(&self) -> ReferenceKind;

    fn describe(&self) -> String;

    /// Values, spatial gradient and Laplacian of `u(t, .)` at `points`.
    fn sample(&self, t: f64, points: &PointSet) -> Result<FieldSamples>;

    fn values(&self, t: f64, points: &PointSet) -> Result<DVector<f64>> {
        Ok(self.sample(t, points)?.values)
    }
}

/// Max-norm residual `|du/dt - f(t, ., u)|` at `points`, with the time
/// derivative from a fourth-order central difference of step `h`.
pub fn pde_residual(
    reference: &dyn ReferenceSolution,
    rhs: &RhsOperator,
    t: f64,
    points: &PointSet,
    h: f64,
) -> Result<f64> {
    let u = |s: f64| reference.values(s, points);
    let dudt = (-u(t + 2.0 * h)? + u(t + h)? * 8.0 - u(t - h)? * 8.0 + u(t - 2.0 * h)?) / (12.0 * h);
    let f = rhs.eval_field(t, points, &reference.sample(t, points)?, RhsPart::Full)?;
    Ok((dudt - f).amax())
}

/// `u(t, x) = u0(x + W(t))` with `W(t) = v t + a t^2 / 2`, the exact solution of
/// `du/dt = grad u . (v + a t)`.
#[derive(Debug, Clone)]
pub struct Transport {
    pub domain: BoxDomain,
    pub profile: Field,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
}

impl Transport {
    pub fn shift(&self, t: f64) -> Vec<f64> {
        (0..self.domain.dim())
            .map(|a| self.velocity[a] * t + 0.5 * self.acceleration.get(a).copied().unwrap_or(0.0) * t * t)
            .collect()
    }
}

impl ReferenceSolution for Transport {
    fn kind(&self) -> ReferenceKind {
        ReferenceKind::Analytic
    }

    fn describe(&self) -> String {
        "analytic transport".into()
    }

    fn sample(&self, t: f64, points: &PointSet) -> Result<FieldSamples> {
        let shifted = points.shifted(&self.shift(t));
        Ok(self.profile.sample(&shifted, &self.domain))
    }
}

/// Separation-of-variables solution of `du/dt = Laplace u + c u` with Dirichlet
/// conditions for a sine-series initial condition.
#[derive(Debug, Clone)]
pub struct SineSeriesHeat {
    pub domain: BoxDomain,
    pub modes: Vec<SineMode>,
    pub reaction: f64,
}

impl SineSeriesHeat {
    pub fn new(domain: BoxDomain, initial: &Field, reaction: f64) -> Result<Self> {
        initial.validate(&domain)?;
        let modes = match initial {
            Field::Zero => Vec::new(),
            Field::SineSeries { modes } => modes.clone(),
            Field::Gaussian { .. } => {
                return Err(Error::config("initial", "analytic heat solution needs a sine-series initial condition"))
            }
        };
        Ok(Self { domain, modes, reaction })
    }

    fn at(&self, t: f64) -> Field {
        Field::SineSeries {
            modes: self
                .modes
                .iter()
                .map(|m| SineMode {
                    amplitude: m.amplitude * ((self.reaction - m.eigenvalue(&self.domain)) * t).exp(),
                    wavenumbers: m.wavenumbers.clone(),
                })
                .collect(),
        }
    }
}

impl ReferenceSolution for SineSeriesHeat {
    fn kind(&self) -> ReferenceKind {
        ReferenceKind::Analytic
    }

    fn describe(&self) -> String {
        format!("analytic sine-series heat ({} modes)", self.modes.len())
    }

    fn sample(&self, t: f64, points: &PointSet) -> Result<FieldSamples> {
        Ok(self.at(t).sample(points, &self.domain))
    }
}

/// `u(t) = g + (u0 - g) e^{-t}`, the exact L2 gradient flow of `|u - g|^2 / 2`.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub domain: BoxDomain,
    pub initial: Field,
    pub target: Field,
}

impl ReferenceSolution for Relaxation {
    fn kind(&self) -> ReferenceKind {
        ReferenceKind::Analytic
    }

    fn describe(&self) -> String {
        "analytic L2 relaxation".into()
    }

    fn sample(&self, t: f64, points: &PointSet) -> Result<FieldSamples> {
        let decay = (-t).exp();
        let u0 = self.initial.sample(points, &self.domain);
        let g = self.target.sample(points, &self.domain);
        let mix = |a: &DVector<f64>, b: &DVector<f64>| b + (a - b) * decay;
        Ok(FieldSamples {
            values: mix(&u0.values, &g.values),
            grad_x: &g.grad_x + (&u0.grad_x - &g.grad_x) * decay,
            laplacian: mix(&u0.laplacian, &g.laplacian),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HeatScheme {
    ImplicitEuler,
    /// Crank-Nicolson with two implicit-Euler half steps at start-up
    #[default]
    CrankNicolson,
}

/// Second-order finite differences in space for `du/dt = u'' + c u` on an
/// interval with homogeneous Dirichlet conditions. States are stored every
/// `record_dt`; sampling interpolates cubically in space and linearly in time.
#[derive(Debug, Clone)]
pub struct FineGridHeat {
    lo: f64,
    hi: f64,
    n_cells: usize,
    record_dt: f64,
    substeps: usize,
    scheme: HeatScheme,
    states: Vec<Vec<f64>>,
}

impl FineGridHeat {
    /// Integrates from `t = 0` to `t_final` with time step `record_dt / substeps`.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        domain: &BoxDomain,
        initial: impl Fn(f64) -> f64,
        reaction: f64,
        t_final: f64,
        n_cells: usize,
        record_dt: f64,
        substeps: usize,
        scheme: HeatScheme,
    ) -> Result<Self> {
        if domain.dim() != 1 {
            return Err(Error::config("reference", "fine-grid solver supports d = 1 only"));
        }
        if n_cells < 4 {
            return Err(Error::config("reference.n_cells", "need at least 4 cells"));
        }
        if !(record_dt > 0.0) || substeps == 0 || !(t_final >= 0.0) {
            return Err(Error::config("reference", "need positive time steps"));
        }
        let (lo, hi) = (domain.lo[0], domain.hi[0]);
        let h = (hi - lo) / n_cells as f64;
        let mut u: Vec<f64> = (0..=n_cells).map(|i| initial(lo + h * i as f64)).collect();
        u[0] = 0.0;
        u[n_cells] = 0.0;
        let n_records = (t_final / record_dt - 1e-9).ceil().max(0.0) as usize;
        let dt = record_dt / substeps as f64;
        let mut states = Vec::with_capacity(n_records + 1);
        states.push(u.clone());
        let mut scratch = Scratch::new(n_cells - 1);
        let mut step = 0usize;
        for r in 0..n_records {
            for _ in 0..substeps {
                match scheme {
                    HeatScheme::ImplicitEuler => implicit_step(&mut u, h, reaction, dt, 1.0, &mut scratch),
                    HeatScheme::CrankNicolson if step < 2 => {
                        implicit_step(&mut u, h, reaction, 0.5 * dt, 1.0, &mut scratch);
                        implicit_step(&mut u, h, reaction, 0.5 * dt, 1.0, &mut scratch);
                    }
                    HeatScheme::CrankNicolson => implicit_step(&mut u, h, reaction, dt, 0.5, &mut scratch),
                }
                step += 1;
            }
            if u.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
                return Err(Error::Divergence {
                    step: r + 1,
                    time: (r + 1) as f64 * record_dt,
                    message: "fine-grid reference blew up".into(),
                    last_theta: Vec::new(),
                });
            }
            states.push(u.clone());
        }
        Ok(Self {
            lo,
            hi,
            n_cells,
            record_dt,
            substeps,
            scheme,
            states,
        })
    }

    pub fn t_final(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.record_dt
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Grid values at the `k`-th recorded time.
    pub fn grid_state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells as f64
    }

    fn sample_level(&self, k: usize, points: &PointSet, out: &mut FieldSamples, weight: f64) {
        let u = &self.states[k];
        let n = self.n_cells;
        let h = self.h();
        let mut grad = vec![0.0; n + 1];
        let mut lap = vec![0.0; n + 1];
        for i in 1..n {
            grad[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
            lap[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
        }
        grad[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
        grad[n] = (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * h);
        // u = 0 on the boundary, so u_t = 0 there and Laplace u = -c u = 0
        for (j, x) in points.iter().enumerate() {
            let (idx, coef) = cubic_stencil(x[0], self.lo, h, n);
            let interp = |v: &[f64]| idx.iter().zip(&coef).map(|(&i, c)| c * v[i]).sum::<f64>();
            out.values[j] += weight * interp(u);
            out.grad_x[(0, j)] += weight * interp(&grad);
            out.laplacian[j] += weight * interp(&lap);
        }
    }
}

/// Four-point Lagrange stencil around `x` on the grid `lo + i h`, `i = 0..=n`.
fn cubic_stencil(x: f64, lo: f64, h: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let s = (x - lo) / h;
    let base = (s.floor() as isize - 1).clamp(0, n as isize - 3) as usize;
    let idx = [base, base + 1, base + 2, base + 3];
    let mut coef = [0.0; 4];
    for a in 0..4 {
        let mut c = 1.0;
        for b in 0..4 {
            if a != b {
                c *= (s - idx[b] as f64) / (idx[a] as f64 - idx[b] as f64);
            }
        }
        coef[a] = c;
    }
    (idx, coef)
}

struct Scratch {
    rhs: Vec<f64>,
    c_prime: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Self {
            rhs: vec![0.0; m],
            c_prime: vec![0.0; m],
        }
    }
}

/// One theta-method step `(I - w dt A) u+ = (I + (1 - w) dt A) u` with
/// `A = D2 + c`, solved by the Thomas algorithm on interior nodes.
fn implicit_step(u: &mut [f64], h: f64, c: f64, dt: f64, w: f64, s: &mut Scratch) {
    let n = u.len() - 1;
    let m = n - 1;
    let r = dt / (h * h);
    let ex = 1.0 - w;
    for i in 1..n {
        let au = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h) + c * u[i];
        s.rhs[i - 1] = u[i] + ex * dt * au;
    }
    let diag = 1.0 + w * (2.0 * r - c * dt);
    let off = -w * r;
    s.c_prime[0] = off / diag;
    s.rhs[0] /= diag;
    for i in 1..m {
        let denom = diag - off * s.c_prime[i - 1];
        s.c_prime[i] = off / denom;
        s.rhs[i] = (s.rhs[i] - off * s.rhs[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        s.rhs[i] -= s.c_prime[i] * s.rhs[i + 1];
    }
    u[1..n].copy_from_slice(&s.rhs[..m]);
}

impl ReferenceSolution for FineGridHeat {
    fn kind(&self) -> ReferenceKind {
        ReferenceKind::FineGrid
    }

    fn describe(&self) -> String {
        format!(
            "fine-grid heat ({:?}, {} cells, dt = {:e})",
            self.scheme,
            self.n_cells,
            self.record_dt / self.substeps as f64
        )
    }

    fn sample(&self, t: f64, points: &PointSet) -> Result<FieldSamples> {
        if points.dim() != 1 {
            return Err(Error::config("points", "fine-grid reference is one-dimensional"));
        }
        let s = t / self.record_dt;
        let last = self.states.len() - 1;
        if s < -1e-9 || s > last as f64 + 1e-9 {
            return Err(Error::config(
                "reference",
                format!("time {t} outside the solved range [0, {}]", self.t_final()),
            ));
        }
        let mut out = FieldSamples::zeros(1, points.len());
        let k = s.round();
        if (s - k).abs() < 1e-9 {
            self.sample_level((k as usize).min(last), points, &mut out, 1.0);
        } else {
            let k0 = (s.floor() as usize).min(last - 1);
            let frac = s - k0 as f64;
            self.sample_level(k0, points, &mut out, 1.0 - frac);
            self.sample_level(k0 + 1, points, &mut out, frac);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{BoundedPart, StiffPart};
    use std::f64::consts::PI;

    fn probe() -> PointSet {
        PointSet::from_1d(&(1..40).map(|i| i as f64 / 40.0).collect::<Vec<_>>())
    }

    fn max_err(reference: &dyn ReferenceSolution, oracle: &dyn ReferenceSolution, t: f64) -> f64 {
        let p = probe();
        (reference.values(t, &p).unwrap() - oracle.values(t, &p).unwrap()).amax()
    }

    #[test]
    fn crank_nicolson_matches_separation_of_variables() {
        let dom = BoxDomain::unit(1);
        for c in [0.0, -1.0, 2.0] {
            let exact = SineSeriesHeat::new(dom.clone(), &Field::sine(1.0, 1), c).unwrap();
            let fine = FineGridHeat::solve(&dom, |x| (PI * x).sin(), c, 0.1, 1024, 1e-2, 20, HeatScheme::CrankNicolson)
                .unwrap();
            let e = max_err(&fine, &exact, 0.1);
            assert!(e < 1e-5, "c = {c} err {e}");
            assert!(max_err(&fine, &exact, 0.05) < 1e-5);
        }
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let fine =
            FineGridHeat::solve(&BoxDomain::unit(1), |_| 0.0, 1.0, 0.05, 256, 1e-2, 4, HeatScheme::CrankNicolson).unwrap();
        assert_eq!(fine.values(0.05, &probe()).unwrap().amax(), 0.0);
    }

    #[test]
    fn implicit_euler_is_first_order_in_time() {
        let dom = BoxDomain::unit(1);
        let exact = SineSeriesHeat::new(dom.clone(), &Field::sine(1.0, 1), 0.0).unwrap();
        let err = |sub: usize| {
            let fine = FineGridHeat::solve(&dom, |x| (PI * x).sin(), 0.0, 0.1, 512, 0.1, sub, HeatScheme::ImplicitEuler)
                .unwrap();
            max_err(&fine, &exact, 0.1)
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn analytic_solutions_satisfy_their_pdes() {
        let dom = BoxDomain::unit(1);
        let initial = Field::SineSeries {
            modes: vec![
                SineMode {
                    amplitude: 1.0,
                    wavenumbers: vec![1],
                },
                SineMode {
                    amplitude: 0.3,
                    wavenumbers: vec![2],
                },
            ],
        };
        let heat = SineSeriesHeat::new(dom.clone(), &initial, -0.5).unwrap();
        let op = RhsOperator::heat(dom, -0.5).unwrap();
        let r = pde_residual(&heat, &op, 0.05, &probe(), 1e-4).unwrap();
        assert!(r < 1e-8, "{r}");

        let window = BoxDomain::interval(-6.0, 6.0).unwrap();
        let transport = Transport {
            domain: window.clone(),
            profile: Field::Gaussian {
                center: vec![0.0],
                width: 0.7,
                amplitude: 1.0,
            },
            velocity: vec![1.0],
            acceleration: vec![2.0],
        };
        let op = RhsOperator::new(
            window,
            StiffPart::None,
            BoundedPart::Advection {
                velocity: vec![1.0],
                acceleration: vec![2.0],
            },
            0.0,
            0.0,
        )
        .unwrap();
        let pts = PointSet::from_1d(&[-2.0, -1.0, -0.3, 0.0, 0.4, 1.5]);
        let r = pde_residual(&transport, &op, 0.3, &pts, 1e-4).unwrap();
        assert!(r < 1e-8, "{r}");

        let dom = BoxDomain::unit(1);
        let target = Field::sine(1.0, 2);
        let relax = Relaxation {
            domain: dom.clone(),
            initial: Field::Gaussian {
                center: vec![0.4],
                width: 0.2,
                amplitude: 0.8,
            },
            target: target.clone(),
        };
        let op = RhsOperator::new(dom, StiffPart::None, BoundedPart::L2GradientFlow { target }, 1.0, 0.0).unwrap();
        let r = pde_residual(&relax, &op, 0.7, &probe(), 1e-4).unwrap();
        assert!(r < 1e-8, "{r}");
    }

    #[test]
    fn fine_grid_derivatives_are_consistent() {
        let dom = BoxDomain::unit(1);
        let exact = SineSeriesHeat::new(dom.clone(), &Field::sine(1.0, 1), 0.0).unwrap();
        let fine = FineGridHeat::solve(&dom, |x| (PI * x).sin(), 0.0, 0.02, 1024, 1e-2, 40, HeatScheme::CrankNicolson)
            .unwrap();
        let p = probe();
        let a = fine.sample(0.02, &p).unwrap();
        let b = exact.sample(0.02, &p).unwrap();
        assert!((&a.grad_x - &b.grad_x).amax() < 1e-4, "{}", (&a.grad_x - &b.grad_x).amax());
        assert!((a.laplacian - b.laplacian).amax() < 1e-3);
    }
}
