use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{JetOrder, Parametrization, PointJet};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    #[default]
    None,
    HomogeneousDirichlet,
}

/// Smooth multiplicative mask `m(x) = prod_a sin(pi (x_a - lo_a) / (hi_a - lo_a))`
/// that vanishes on the boundary of a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMask {
    pub kind: MaskKind,
    pub domain: BoxDomain,
}

/// Value, gradient and Laplacian of the mask at one point.
#[derive(Debug, Clone, Copy)]
pub struct MaskJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub laplacian: f64,
}

impl BoundaryMask {
    pub fn none(domain: BoxDomain) -> Self {
        Self {
            kind: MaskKind::None,
            domain,
        }
    }

    pub fn dirichlet(domain: BoxDomain) -> Self {
        Self {
            kind: MaskKind::HomogeneousDirichlet,
            domain,
        }
    }

    pub fn jet(&self, x: &[f64]) -> MaskJet {
        let d = self.domain.dim();
        let mut sines = [1.0; 2];
        let mut cosines = [0.0; 2];
        let mut freq = [0.0; 2];
        for a in 0..d {
            let len = self.domain.length(a);
            let t = (x[a] - self.domain.lo[a]) / len;
            // sin(pi t) = sin(pi (1 - t)); the smaller argument makes the boundary exactly zero
            sines[a] = (PI * t.min(1.0 - t)).sin();
            cosines[a] = (PI * t).cos();
            freq[a] = PI / len;
        }
        let value: f64 = sines[..d].iter().product();
        let mut grad = [0.0; 2];
        for a in 0..d {
            let others: f64 = (0..d).filter(|&b| b != a).map(|b| sines[b]).product();
            grad[a] = freq[a] * cosines[a] * others;
        }
        let laplacian = -value * freq[..d].iter().map(|f| f * f).sum::<f64>();
        MaskJet { value, grad, laplacian }
    }
}

/// A model multiplied by a [`BoundaryMask`], so that it satisfies homogeneous
/// Dirichlet conditions for every parameter.
#[derive(Debug)]
pub struct Masked {
    inner: Box<dyn Parametrization>,
    mask: BoundaryMask,
}

impl Masked {
    pub fn new(inner: Box<dyn Parametrization>, mask: BoundaryMask) -> Result<Self> {
        if inner.dim() != mask.domain.dim() {
            return Err(Error::config("model.mask", "mask domain dimension differs from model dimension"));
        }
        Ok(Self { inner, mask })
    }

    pub fn inner(&self) -> &dyn Parametrization {
        self.inner.as_ref()
    }

    pub fn mask(&self) -> &BoundaryMask {
        &self.mask
    }
}

impl Parametrization for Masked {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn point_jet(&self, theta: &[f64], x: &[f64], order: JetOrder, jet: &mut PointJet) {
        if self.mask.kind == MaskKind::None {
            self.inner.point_jet(theta, x, order, jet);
            return;
        }
        let d = self.dim();
        let p = self.n_params();
        let m = self.mask.jet(x);
        self.inner.point_jet(theta, x, order, jet);
        if order >= JetOrder::Mixed {
            for i in 0..p {
                let mut cross = 0.0;
                for a in 0..d {
                    let g = jet.d_theta_grad_x[i * d + a];
                    cross += m.grad[a] * g;
                    jet.d_theta_grad_x[i * d + a] = m.grad[a] * jet.d_theta[i] + m.value * g;
                }
                jet.d_theta_laplacian[i] =
                    m.laplacian * jet.d_theta[i] + 2.0 * cross + m.value * jet.d_theta_laplacian[i];
            }
        }
        if order >= JetOrder::Spatial {
            let mut cross = 0.0;
            for a in 0..d {
                cross += m.grad[a] * jet.grad_x[a];
                jet.grad_x[a] = m.grad[a] * jet.value + m.value * jet.grad_x[a];
            }
            jet.laplacian = m.laplacian * jet.value + 2.0 * cross + m.value * jet.laplacian;
        }
        if order >= JetOrder::Theta {
            jet.d_theta.iter_mut().for_each(|g| *g *= m.value);
        }
        jet.value *= m.value;
    }

    fn hessian_vec(&self, theta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let start: Vec<f64> = out.to_vec();
        out.iter_mut().for_each(|o| *o = 0.0);
        self.inner.hessian_vec(theta, x, v, out);
        let m = match self.mask.kind {
            MaskKind::None => 1.0,
            MaskKind::HomogeneousDirichlet => self.mask.jet(x).value,
        };
        for (o, s) in out.iter_mut().zip(start) {
            *o = s + m * *o;
        }
    }

    fn contains_self_in_tangent(&self) -> bool {
        self.inner.contains_self_in_tangent()
    }

    fn describe(&self) -> String {
        match self.mask.kind {
            MaskKind::None => self.inner.describe(),
            MaskKind::HomogeneousDirichlet => format!("masked({})", self.inner.describe()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::*;
    use crate::models::{GaussianMixture, ShallowNetwork};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn masked_models(dim: usize) -> Vec<Masked> {
        let domain = BoxDomain::new(vec![0.0; dim], vec![1.0, 2.0][..dim].to_vec()).unwrap();
        vec![
            Masked::new(
                Box::new(GaussianMixture::new(2, dim, 0.3, true).unwrap()),
                BoundaryMask::dirichlet(domain.clone()),
            )
            .unwrap(),
            Masked::new(Box::new(ShallowNetwork::new(3, dim).unwrap()), BoundaryMask::dirichlet(domain)).unwrap(),
        ]
    }

    #[test]
    fn vanishes_exactly_on_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in masked_models(1) {
            let theta: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(0.2..1.0)).collect();
            for x in [0.0, 1.0] {
                assert_eq!(jet_at(&m, &theta, &[x], JetOrder::Value).value, 0.0);
            }
        }
        for m in masked_models(2) {
            let theta: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(0.2..1.0)).collect();
            for x in [[0.0, 0.7], [1.0, 1.3], [0.4, 0.0], [0.2, 2.0]] {
                assert_eq!(jet_at(&m, &theta, &x, JetOrder::Value).value, 0.0);
            }
        }
    }

    #[test]
    fn masked_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dim in [1, 2] {
            for m in masked_models(dim) {
                for _ in 0..10 {
                    let theta: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(0.2..1.0)).collect();
                    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..0.95)).collect();
                    let jet = jet_at(&m, &theta, &x, JetOrder::Mixed);
                    let fd_x = fd_gradient(&x, 1e-6, |y| jet_at(&m, &theta, y, JetOrder::Value).value);
                    assert!(rel_err(&jet.grad_x, &fd_x) < 1e-7);
                    let lap_fd: f64 = (0..dim)
                        .map(|a| {
                            let g = fd_gradient(&x, 1e-5, |y| jet_at(&m, &theta, y, JetOrder::Spatial).grad_x[a]);
                            g[a]
                        })
                        .sum();
                    assert!((jet.laplacian - lap_fd).abs() < 1e-6 * (1.0 + lap_fd.abs()));
                    let fd_lap = fd_gradient(&theta, 1e-6, |t| jet_at(&m, t, &x, JetOrder::Spatial).laplacian);
                    assert!(rel_err(&jet.d_theta_laplacian, &fd_lap) < 1e-6);
                    let v: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mut hv = vec![0.0; m.n_params()];
                    m.hessian_vec(&theta, &x, &v, &mut hv);
                    let fd_hv = fd_gradient(&theta, 1e-6, |t| {
                        let j = jet_at(&m, t, &x, JetOrder::Theta);
                        j.d_theta.iter().zip(&v).map(|(g, vi)| g * vi).sum()
                    });
                    assert!(rel_err(&hv, &fd_hv) < 1e-6);
                }
            }
        }
    }
}
