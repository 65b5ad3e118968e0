//! Least-squares fits of a model to node values, used to obtain the initial
//! parameter of a trajectory.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gauss_newton::{gauss_newton, GaussNewtonOptions, GaussNewtonOutcome, ResidualModel};
use crate::models::{snapshot, JetOrder, ModelSpec, ParamVector, Parametrization};
use crate::quadrature::QuadratureRule;

struct FitResidual<'a> {
    model: &'a dyn Parametrization,
    rule: &'a QuadratureRule,
    target: &'a DVector<f64>,
}

impl ResidualModel for FitResidual<'_> {
    fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(snapshot(self.model, theta.as_slice(), self.rule.nodes(), JetOrder::Value)?.values - self.target)
    }

    fn linearize(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let snap = snapshot(self.model, theta.as_slice(), self.rule.nodes(), JetOrder::Theta)?;
        Ok((snap.values - self.target, snap.d_theta))
    }
}

/// Minimizes `|u(theta) - target|_M` by Gauss-Newton from `start`.
pub fn fit_to_values(
    model: &dyn Parametrization,
    target: &DVector<f64>,
    rule: &QuadratureRule,
    start: &ParamVector,
    tau: f64,
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonOutcome> {
    start.check(model)?;
    if target.len() != rule.len() {
        return Err(Error::config("initial", "target length differs from the number of nodes"));
    }
    gauss_newton(&FitResidual { model, rule, target }, start.vector(), rule, tau, opts)
}

/// Indices of the parameters the model output is linear in.
pub fn linear_parameters(spec: &ModelSpec, dim: usize) -> Vec<usize> {
    match *spec {
        ModelSpec::GaussianMixture { n, .. } => (n * dim..n * dim + n).collect(),
        ModelSpec::ShallowNetwork { n } => (n * (dim + 1)..n * (dim + 2) + 1).collect(),
    }
}

/// Solves for the linear parameters with all others frozen, then refines
/// every parameter by Gauss-Newton.
pub fn fit_initial(
    spec: &ModelSpec,
    model: &dyn Parametrization,
    target: &DVector<f64>,
    rule: &QuadratureRule,
    start: &ParamVector,
    tau: f64,
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonOutcome> {
    start.check(model)?;
    let linear = linear_parameters(spec, model.dim());
    let mut theta = start.vector().clone();
    for &i in &linear {
        theta[i] = 0.0;
    }
    let snap = snapshot(model, theta.as_slice(), rule.nodes(), JetOrder::Theta)?;
    let cols = DMatrix::from_fn(rule.len(), linear.len(), |q, c| snap.d_theta[(linear[c], q)] * rule.sqrt_weights()[q]);
    let rhs = (target - &snap.values).component_mul(rule.sqrt_weights());
    let ls = crate::quadrature::solve_least_squares(&cols, &rhs, tau)?;
    for (c, &i) in linear.iter().enumerate() {
        theta[i] = ls.x[c];
    }
    fit_to_values(model, target, rule, &ParamVector::from_vector(theta), tau, opts)
}

/// Seeded starting point: evenly spaced units jittered by a tenth of their
/// spacing, with output weights read off the target at each unit's location.
pub fn seeded_start(
    spec: &ModelSpec,
    domain: &BoxDomain,
    target: impl Fn(&[f64]) -> f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.dim();
    let n = spec.n_units();
    let per_axis = (n as f64).powf(1.0 / d as f64).ceil() as usize;
    let sites: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|a| {
                    let idx = if a == 0 { i % per_axis } else { i / per_axis };
                    let h = domain.length(a) / per_axis as f64;
                    domain.lo[a] + h * (idx as f64 + 0.5) + 0.1 * h * rng.gen_range(-1.0..=1.0)
                })
                .collect()
        })
        .collect();
    let values: Vec<f64> = sites.iter().map(|x| target(x)).collect();
    Ok(match *spec {
        ModelSpec::GaussianMixture {
            bandwidth,
            trainable_bandwidth,
            ..
        } => {
            let mut theta: Vec<f64> = sites.concat();
            theta.extend(&values);
            if trainable_bandwidth {
                theta.extend(std::iter::repeat_n(bandwidth, n));
            }
            theta
        }
        ModelSpec::ShallowNetwork { .. } => {
            // unit i: tanh(a . x + b) with a random unit direction centred at site i
            let mut theta = Vec::with_capacity(n * (d + 2) + 1);
            for site in &sites {
                let scale = 4.0 / domain.length(0);
                let a: Vec<f64> = (0..d).map(|_| scale * rng.gen_range(-1.0..=1.0)).collect();
                let b = -a.iter().zip(site).map(|(ai, xi)| ai * xi).sum::<f64>();
                theta.extend(a);
                theta.push(b);
            }
            theta.extend(values.iter().map(|v| 0.5 * v));
            theta.push(0.0);
            theta
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BoundaryMask, GaussianMixture};

    #[test]
    fn recovers_a_representable_target() {
        let dom = BoxDomain::interval(-6.0, 6.0).unwrap();
        let model = GaussianMixture::new(1, 1, 0.8, false).unwrap();
        let rule = QuadratureRule::gauss_legendre(&dom, 128).unwrap();
        let truth = [0.3, 1.2];
        let target = crate::models::eval(&model, &truth, rule.nodes()).unwrap();
        let spec = ModelSpec::GaussianMixture {
            n: 1,
            bandwidth: 0.8,
            trainable_bandwidth: false,
        };
        let built = spec.build(1, &BoundaryMask::none(dom.clone())).unwrap();
        let start = seeded_start(&spec, &dom, |x| (-(x[0] - 0.3f64).powi(2) / 1.28).exp() * 1.2, 7).unwrap();
        let out = fit_to_values(
            built.as_ref(),
            &target,
            &rule,
            &ParamVector::new(start, built.as_ref()).unwrap(),
            1e-14,
            &GaussNewtonOptions {
                max_iterations: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((out.theta[0] - 0.3).abs() < 1e-8 && (out.theta[1] - 1.2).abs() < 1e-8);
    }

    #[test]
    fn seeded_start_is_deterministic() {
        let dom = BoxDomain::unit(2);
        let spec = ModelSpec::ShallowNetwork { n: 5 };
        let a = seeded_start(&spec, &dom, |x| x[0] * x[1], 3).unwrap();
        let b = seeded_start(&spec, &dom, |x| x[0] * x[1], 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5 * 4 + 1);
    }
}
