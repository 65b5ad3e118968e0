use super::{JetOrder, Parametrization, PointJet};
use crate::error::{Error, Result};

/// One-hidden-layer tanh network with a linear output layer,
/// `u(theta, x) = sum_i w_i tanh(a_i . x + b_i) + c`.
///
/// Parameter layout: inner parameters `(a_1, b_1), ..., (a_N, b_N)` (each
/// `d + 1` entries), then outer weights `w_1..w_N`, then the output bias `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNetwork {
    n_units: usize,
    dim: usize,
}

impl ShallowNetwork {
    pub fn new(n_units: usize, dim: usize) -> Result<Self> {
        if n_units == 0 {
            return Err(Error::config("model.n", "need at least one hidden unit"));
        }
        if dim == 0 || dim > 2 {
            return Err(Error::config("model.dim", "spatial dimension must be 1 or 2"));
        }
        Ok(Self { n_units, dim })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn inner_weight_index(&self, unit: usize, axis: usize) -> usize {
        unit * (self.dim + 1) + axis
    }

    pub fn inner_bias_index(&self, unit: usize) -> usize {
        unit * (self.dim + 1) + self.dim
    }

    pub fn outer_weight_index(&self, unit: usize) -> usize {
        self.n_units * (self.dim + 1) + unit
    }

    pub fn output_bias_index(&self) -> usize {
        self.n_units * (self.dim + 2)
    }
}

impl Parametrization for ShallowNetwork {
    fn n_params(&self) -> usize {
        self.n_units * (self.dim + 2) + 1
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn point_jet(&self, theta: &[f64], x: &[f64], order: JetOrder, jet: &mut PointJet) {
        let d = self.dim;
        let ci = self.output_bias_index();
        jet.value = theta[ci];
        if order >= JetOrder::Theta {
            jet.d_theta[ci] = 1.0;
        }
        for i in 0..self.n_units {
            let a = &theta[self.inner_weight_index(i, 0)..self.inner_weight_index(i, 0) + d];
            let bi = self.inner_bias_index(i);
            let wi = self.outer_weight_index(i);
            let w = theta[wi];
            let s: f64 = a.iter().zip(x).map(|(ak, xk)| ak * xk).sum::<f64>() + theta[bi];
            let sig = s.tanh();
            jet.value += w * sig;
            if order < JetOrder::Theta {
                continue;
            }
            let s1 = 1.0 - sig * sig;
            for k in 0..d {
                jet.d_theta[self.inner_weight_index(i, k)] = w * s1 * x[k];
            }
            jet.d_theta[bi] = w * s1;
            jet.d_theta[wi] = sig;
            if order < JetOrder::Spatial {
                continue;
            }
            let s2 = -2.0 * sig * s1;
            let a2: f64 = a.iter().map(|v| v * v).sum();
            for k in 0..d {
                jet.grad_x[k] += w * s1 * a[k];
            }
            jet.laplacian += w * s2 * a2;
            if order < JetOrder::Mixed {
                continue;
            }
            let s3 = -2.0 * s1 * s1 + 4.0 * sig * sig * s1;
            for j in 0..d {
                let aj = self.inner_weight_index(i, j);
                for k in 0..d {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    jet.d_theta_grad_x[aj * d + k] = w * (s2 * a[k] * x[j] + s1 * delta);
                }
                jet.d_theta_laplacian[aj] = w * (s3 * x[j] * a2 + 2.0 * s2 * a[j]);
            }
            for k in 0..d {
                jet.d_theta_grad_x[bi * d + k] = w * s2 * a[k];
                jet.d_theta_grad_x[wi * d + k] = s1 * a[k];
            }
            jet.d_theta_laplacian[bi] = w * s3 * a2;
            jet.d_theta_laplacian[wi] = s2 * a2;
        }
    }

    fn hessian_vec(&self, theta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..self.n_units {
            let a0 = self.inner_weight_index(i, 0);
            let bi = self.inner_bias_index(i);
            let wi = self.outer_weight_index(i);
            let w = theta[wi];
            let s: f64 = (0..d).map(|k| theta[a0 + k] * x[k]).sum::<f64>() + theta[bi];
            let sig = s.tanh();
            let s1 = 1.0 - sig * sig;
            let s2 = -2.0 * sig * s1;
            let x_dot_va: f64 = (0..d).map(|k| x[k] * v[a0 + k]).sum();
            // directional derivative of the pre-activation along v
            let ds = x_dot_va + v[bi];
            for j in 0..d {
                out[a0 + j] += w * s2 * x[j] * ds + s1 * x[j] * v[wi];
            }
            out[bi] += w * s2 * ds + s1 * v[wi];
            out[wi] += s1 * ds;
        }
    }

    fn contains_self_in_tangent(&self) -> bool {
        // u = sum_i w_i du/dw_i + c du/dc
        true
    }

    fn describe(&self) -> String {
        format!("shallow-network(N={}, d={})", self.n_units, self.dim)
    }
}
