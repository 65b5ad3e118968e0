//! Discrete inner product `<f, g>_M = sum_q w_q f(x_q) g(x_q)` on a box
//! domain, Gram/moment assembly and minimal-norm least-squares solvers.

mod rules;
mod solve;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, PointSet};
use crate::error::{Error, Result};

pub use rules::gauss_legendre_reference;
pub use solve::{
    assemble_gram, assemble_moment, gram_from_gradients, moment_from_gradients, solve_least_squares,
    solve_min_norm, weighted_jacobian, GramMatrix, LeastSquaresSolution, MinNormSolution,
};
pub(crate) use solve::{effective_rank, ratio as condition_ratio};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    GaussLegendre,
    Trapezoid,
    MonteCarlo { seed: u64 },
}

/// Config-level description of a quadrature rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum QuadratureSpec {
    GaussLegendre {
        #[serde(default)]
        nodes_per_dim: Option<usize>,
    },
    Trapezoid {
        nodes_per_dim: usize,
    },
    MonteCarlo {
        n_nodes: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::GaussLegendre { nodes_per_dim: None }
    }
}

impl QuadratureSpec {
    pub fn build(&self, domain: &BoxDomain) -> Result<QuadratureRule> {
        match *self {
            QuadratureSpec::GaussLegendre { nodes_per_dim } => {
                let n = nodes_per_dim.unwrap_or(if domain.dim() == 1 { 64 } else { 32 });
                QuadratureRule::gauss_legendre(domain, n)
            }
            QuadratureSpec::Trapezoid { nodes_per_dim } => QuadratureRule::trapezoid(domain, nodes_per_dim),
            QuadratureSpec::MonteCarlo { n_nodes, seed } => QuadratureRule::monte_carlo(domain, n_nodes, seed),
        }
    }
}

/// Nodes and positive weights realizing `<., .>_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    kind: QuadratureKind,
    nodes: PointSet,
    weights: DVector<f64>,
    sqrt_weights: DVector<f64>,
}

impl QuadratureRule {
    /// Builds a rule from explicit nodes and weights.
    pub fn new(kind: QuadratureKind, nodes: PointSet, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::config("quadrature", "need at least one node"));
        }
        if weights.len() != nodes.len() {
            return Err(Error::config("quadrature", "weight count differs from node count"));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("quadrature", format!("weight {i} is not positive")));
        }
        let weights = DVector::from_vec(weights);
        let sqrt_weights = weights.map(f64::sqrt);
        Ok(Self {
            kind,
            nodes,
            weights,
            sqrt_weights,
        })
    }

    /// Tensor-product Gauss-Legendre rule with `n` nodes per axis.
    pub fn gauss_legendre(domain: &BoxDomain, n: usize) -> Result<Self> {
        let (x, w) = gauss_legendre_reference(n)?;
        let axes = (0..domain.dim())
            .map(|a| {
                let (lo, len) = (domain.lo[a], domain.length(a));
                let nodes = x.iter().map(|xi| lo + 0.5 * len * (xi + 1.0)).collect();
                let weights = w.iter().map(|wi| 0.5 * len * wi).collect();
                (nodes, weights)
            })
            .collect::<Vec<_>>();
        let (nodes, weights) = rules::tensor_product(&axes);
        Self::new(QuadratureKind::GaussLegendre, nodes, weights)
    }

    /// Composite trapezoid rule on `n` uniform nodes per axis, endpoints included.
    pub fn trapezoid(domain: &BoxDomain, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("quadrature.nodes_per_dim", "trapezoid rule needs at least 2 nodes"));
        }
        let axes = (0..domain.dim())
            .map(|a| {
                let (lo, len) = (domain.lo[a], domain.length(a));
                let h = len / (n - 1) as f64;
                let nodes = (0..n).map(|i| if i == n - 1 { domain.hi[a] } else { lo + h * i as f64 }).collect();
                let weights = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
                (nodes, weights)
            })
            .collect::<Vec<_>>();
        let (nodes, weights) = rules::tensor_product(&axes);
        Self::new(QuadratureKind::Trapezoid, nodes, weights)
    }

    /// `n` uniformly distributed nodes with equal weights `|Omega| / n`.
    pub fn monte_carlo(domain: &BoxDomain, n: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if n == 0 {
            return Err(Error::config("quadrature.n_nodes", "need at least one node"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = domain.dim();
        let coords = (0..n * d)
            .map(|i| {
                let a = i % d;
                rng.gen_range(domain.lo[a]..domain.hi[a])
            })
            .collect();
        let nodes = PointSet::new(d, coords)?;
        let weights = vec![domain.volume() / n as f64; n];
        Self::new(QuadratureKind::MonteCarlo { seed }, nodes, weights)
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn nodes(&self) -> &PointSet {
        &self.nodes
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn sqrt_weights(&self) -> &DVector<f64> {
        &self.sqrt_weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.sum()
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::config(
                "node values",
                format!("expected {} node values, got {}", self.len(), v.len()),
            ));
        }
        Ok(())
    }

    /// `sum_q w_q f_q g_q`.
    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(self.inner_unchecked(f, g))
    }

    pub(crate) fn inner_unchecked(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        self.weights.iter().zip(f.iter()).zip(g.iter()).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn norm(&self, f: &DVector<f64>) -> Result<f64> {
        Ok(self.inner(f, f)?.max(0.0).sqrt())
    }

    pub(crate) fn norm_unchecked(&self, f: &DVector<f64>) -> f64 {
        self.inner_unchecked(f, f).max(0.0).sqrt()
    }

    /// Node values scaled by `sqrt(w_q)`, so that Euclidean norms become M-norms.
    pub fn weighted(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(f)?;
        Ok(f.component_mul(&self.sqrt_weights))
    }

    /// Rule with nodes (and weights) reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let weights = perm.iter().map(|&i| self.weights[i]).collect();
        Self::new(self.kind, self.nodes.permuted(perm), weights)
    }
}
