use super::{JetOrder, Parametrization, PointJet};
use crate::error::{Error, Result};

/// The unnormalized Gaussian bump `exp(-|z|^2 / 2)`, with peak value 1.
pub fn gaussian_bump(r2: f64) -> f64 {
    (-0.5 * r2).exp()
}

/// Sum of Gaussian kernels `u(theta, x) = sum_i beta_i phi((x - alpha_i) / h_i)`.
///
/// Parameter layout: centers `alpha_1..alpha_N` (each `d` entries), then
/// weights `beta_1..beta_N`, then, only when the bandwidth is trainable,
/// bandwidths `h_1..h_N`. With a fixed bandwidth every kernel uses
/// [`GaussianMixture::bandwidth`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    n_kernels: usize,
    dim: usize,
    bandwidth: f64,
    trainable_bandwidth: bool,
}

impl GaussianMixture {
    pub fn new(n_kernels: usize, dim: usize, bandwidth: f64, trainable_bandwidth: bool) -> Result<Self> {
        if n_kernels == 0 {
            return Err(Error::config("model.n", "need at least one kernel"));
        }
        if dim == 0 || dim > 2 {
            return Err(Error::config("model.dim", "spatial dimension must be 1 or 2"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::config("model.bandwidth", "must be a positive finite number"));
        }
        Ok(Self {
            n_kernels,
            dim,
            bandwidth,
            trainable_bandwidth,
        })
    }

    pub fn n_kernels(&self) -> usize {
        self.n_kernels
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn trainable_bandwidth(&self) -> bool {
        self.trainable_bandwidth
    }

    pub fn center_index(&self, kernel: usize, axis: usize) -> usize {
        kernel * self.dim + axis
    }

    pub fn weight_index(&self, kernel: usize) -> usize {
        self.n_kernels * self.dim + kernel
    }

    pub fn bandwidth_index(&self, kernel: usize) -> Option<usize> {
        self.trainable_bandwidth
            .then(|| self.n_kernels * (self.dim + 1) + kernel)
    }

    /// Packs centers, weights and (if trainable) bandwidths into a parameter vector.
    pub fn pack(&self, centers: &[Vec<f64>], weights: &[f64], bandwidths: Option<&[f64]>) -> Result<Vec<f64>> {
        if centers.len() != self.n_kernels || weights.len() != self.n_kernels {
            return Err(Error::config("theta", "need one center and one weight per kernel"));
        }
        let mut theta = Vec::with_capacity(self.n_params());
        for c in centers {
            if c.len() != self.dim {
                return Err(Error::config("theta", "center dimension mismatch"));
            }
            theta.extend_from_slice(c);
        }
        theta.extend_from_slice(weights);
        if self.trainable_bandwidth {
            match bandwidths {
                Some(h) if h.len() == self.n_kernels => theta.extend_from_slice(h),
                Some(_) => return Err(Error::config("theta", "need one bandwidth per kernel")),
                None => theta.extend(std::iter::repeat_n(self.bandwidth, self.n_kernels)),
            }
        }
        Ok(theta)
    }

    fn kernel_width(&self, theta: &[f64], i: usize) -> f64 {
        match self.bandwidth_index(i) {
            Some(k) => theta[k],
            None => self.bandwidth,
        }
    }
}

impl Parametrization for GaussianMixture {
    fn n_params(&self) -> usize {
        self.n_kernels * (self.dim + 1) + if self.trainable_bandwidth { self.n_kernels } else { 0 }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn point_jet(&self, theta: &[f64], x: &[f64], order: JetOrder, jet: &mut PointJet) {
        let d = self.dim;
        let df = d as f64;
        let mut z = [0.0; 2];
        for i in 0..self.n_kernels {
            let h = self.kernel_width(theta, i);
            let beta = theta[self.weight_index(i)];
            let mut r2 = 0.0;
            for a in 0..d {
                z[a] = (x[a] - theta[self.center_index(i, a)]) / h;
                r2 += z[a] * z[a];
            }
            let phi = gaussian_bump(r2);
            jet.value += beta * phi;
            if order < JetOrder::Theta {
                continue;
            }
            let wi = self.weight_index(i);
            let hi = self.bandwidth_index(i);
            for a in 0..d {
                jet.d_theta[self.center_index(i, a)] = beta * phi * z[a] / h;
            }
            jet.d_theta[wi] = phi;
            if let Some(hi) = hi {
                jet.d_theta[hi] = beta * phi * r2 / h;
            }
            if order < JetOrder::Spatial {
                continue;
            }
            let h2 = h * h;
            for a in 0..d {
                jet.grad_x[a] -= beta * phi * z[a] / h;
            }
            jet.laplacian += beta * phi * (r2 - df) / h2;
            if order < JetOrder::Mixed {
                continue;
            }
            let h3 = h2 * h;
            for b in 0..d {
                let ci = self.center_index(i, b);
                for a in 0..d {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    jet.d_theta_grad_x[ci * d + a] = beta * phi * (delta - z[a] * z[b]) / h2;
                }
                jet.d_theta_laplacian[ci] = beta * phi * z[b] * (r2 - df - 2.0) / h3;
            }
            for a in 0..d {
                jet.d_theta_grad_x[wi * d + a] = -phi * z[a] / h;
            }
            jet.d_theta_laplacian[wi] = phi * (r2 - df) / h2;
            if let Some(hi) = hi {
                for a in 0..d {
                    jet.d_theta_grad_x[hi * d + a] = -beta * phi * z[a] * (r2 - 2.0) / h2;
                }
                jet.d_theta_laplacian[hi] = beta * phi * (r2 * r2 - (df + 4.0) * r2 + 2.0 * df) / h3;
            }
        }
    }

    fn hessian_vec(&self, theta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut z = [0.0; 2];
        for i in 0..self.n_kernels {
            let h = self.kernel_width(theta, i);
            let h2 = h * h;
            let beta = theta[self.weight_index(i)];
            let mut r2 = 0.0;
            for a in 0..d {
                z[a] = (x[a] - theta[self.center_index(i, a)]) / h;
                r2 += z[a] * z[a];
            }
            let phi = gaussian_bump(r2);
            let wi = self.weight_index(i);
            let hi = self.bandwidth_index(i);
            let v_beta = v[wi];
            let v_h = hi.map_or(0.0, |k| v[k]);
            // z . v_alpha
            let z_dot_va: f64 = (0..d).map(|b| z[b] * v[self.center_index(i, b)]).sum();
            for a in 0..d {
                let va = v[self.center_index(i, a)];
                let alpha_alpha = beta * phi * (z[a] * z_dot_va - va) / h2;
                let beta_alpha = phi * z[a] / h * v_beta;
                let h_alpha = beta * phi * z[a] * (r2 - 2.0) / h2 * v_h;
                out[self.center_index(i, a)] += alpha_alpha + beta_alpha + h_alpha;
            }
            out[wi] += phi * z_dot_va / h + phi * r2 / h * v_h;
            if let Some(hi) = hi {
                out[hi] += beta * phi * (r2 - 2.0) / h2 * z_dot_va
                    + phi * r2 / h * v_beta
                    + beta * phi * r2 * (r2 - 3.0) / h2 * v_h;
            }
        }
    }

    fn contains_self_in_tangent(&self) -> bool {
        // u = sum_i beta_i * du/dbeta_i
        true
    }

    fn describe(&self) -> String {
        format!(
            "gaussian-mixture(N={}, d={}, h={}{})",
            self.n_kernels,
            self.dim,
            self.bandwidth,
            if self.trainable_bandwidth { ", trainable" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(m: &GaussianMixture, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut theta: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(k0) = m.bandwidth_index(0) {
            for k in k0..k0 + m.n_kernels() {
                theta[k] = rng.gen_range(0.3..0.8);
            }
        }
        theta
    }

    #[test]
    fn zero_weight_is_zero_everywhere() {
        let m = GaussianMixture::new(1, 1, 1.0, false).unwrap();
        for x in [-3.0, 0.0, 0.7, 5.0] {
            assert_eq!(jet_at(&m, &[0.0, 0.0], &[x], JetOrder::Mixed).value, 0.0);
        }
    }

    #[test]
    fn peak_value_is_one() {
        let m = GaussianMixture::new(1, 1, 1.0, false).unwrap();
        assert_eq!(jet_at(&m, &[0.0, 1.0], &[0.0], JetOrder::Value).value, 1.0);
    }

    #[test]
    fn duplicated_kernels_match_doubled_weight() {
        let two = GaussianMixture::new(2, 1, 0.3, false).unwrap();
        let one = GaussianMixture::new(1, 1, 0.3, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0)];
            let a = jet_at(&two, &[0.2, 0.2, 0.7, 0.7], &x, JetOrder::Value).value;
            let b = jet_at(&one, &[0.2, 1.4], &x, JetOrder::Value).value;
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn weight_row_is_the_kernel() {
        let m = GaussianMixture::new(2, 1, 0.4, false).unwrap();
        let theta = [0.1, -0.3, 2.0, -1.5];
        for x in [-1.0, 0.0, 0.25, 1.3] {
            let jet = jet_at(&m, &theta, &[x], JetOrder::Theta);
            assert_eq!(jet.d_theta[2], gaussian_bump(((x - 0.1) / 0.4f64).powi(2)));
            assert_eq!(jet.d_theta[3], gaussian_bump(((x + 0.3) / 0.4f64).powi(2)));
        }
    }

    #[test]
    fn duplicated_kernel_rows_are_identical() {
        let m = GaussianMixture::new(3, 1, 0.2, false).unwrap();
        let theta = [0.4, 0.4, 0.7, 1.1, 1.1, -0.5];
        for x in [0.0, 0.3, 0.5, 0.9] {
            let jet = jet_at(&m, &theta, &[x], JetOrder::Mixed);
            assert_eq!(jet.d_theta[0], jet.d_theta[1]);
            assert_eq!(jet.d_theta[3], jet.d_theta[4]);
        }
    }

    #[test]
    fn single_kernel_laplacian_closed_form() {
        // u = beta exp(-(x-a)^2 / (2 h^2));  u'' = beta exp(.) ((x-a)^2 / h^4 - 1 / h^2)
        let m = GaussianMixture::new(1, 1, 0.5, false).unwrap();
        let (a, beta, h): (f64, f64, f64) = (0.3, 1.7, 0.5);
        for x in [-1.0, 0.0, 0.3, 0.8, 2.0] {
            let e = (-(x - a) * (x - a) / (2.0 * h * h)).exp();
            let expected = beta * e * ((x - a) * (x - a) / h.powi(4) - 1.0 / (h * h));
            let got = jet_at(&m, &[a, beta], &[x], JetOrder::Spatial).laplacian;
            assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (dim, trainable) in [(1, false), (1, true), (2, false), (2, true)] {
            let m = GaussianMixture::new(3, dim, 0.5, trainable).unwrap();
            for _ in 0..20 {
                let theta = random_theta(&m, &mut rng);
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let jet = jet_at(&m, &theta, &x, JetOrder::Mixed);
                let value = |t: &[f64], x: &[f64]| jet_at(&m, t, x, JetOrder::Value).value;
                let fd_theta = fd_gradient(&theta, 1e-6, |t| value(t, &x));
                assert!(rel_err(&jet.d_theta, &fd_theta) < 1e-7);
                let fd_x = fd_gradient(&x, 1e-6, |y| value(&theta, y));
                assert!(rel_err(&jet.grad_x, &fd_x) < 1e-7);
                let fd_lap_theta = fd_gradient(&theta, 1e-6, |t| jet_at(&m, t, &x, JetOrder::Spatial).laplacian);
                assert!(rel_err(&jet.d_theta_laplacian, &fd_lap_theta) < 1e-6);
                for a in 0..dim {
                    let fd = fd_gradient(&theta, 1e-6, |t| jet_at(&m, t, &x, JetOrder::Spatial).grad_x[a]);
                    let an: Vec<f64> = (0..m.n_params()).map(|i| jet.d_theta_grad_x[i * dim + a]).collect();
                    assert!(rel_err(&an, &fd) < 1e-6);
                }
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
