//! Right-hand sides `f(t, x, u) = [Laplace u] + g(t, x, u, grad u)`, closed-form
//! fields and reference solutions.

mod field;
mod reference;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, PointSet};
use crate::error::{ensure_finite, Error, Result};
use crate::models::{snapshot, JetOrder, ModelSnapshot, Parametrization};
use crate::quadrature::QuadratureRule;

pub use field::{Field, FieldJet, FieldSamples, SineMode};
pub use reference::{
    pde_residual, FineGridHeat, HeatScheme, ReferenceKind, ReferenceSolution, Relaxation, SineSeriesHeat, Transport,
};

/// Smallest eigenvalue of `-Laplace` with Dirichlet conditions on a box.
pub fn smallest_dirichlet_eigenvalue(domain: &BoxDomain) -> f64 {
    (0..domain.dim()).map(|a| (PI / domain.length(a)).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StiffPart {
    #[default]
    None,
    Laplacian,
}

/// Built-in bounded terms `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundedPart {
    #[default]
    Zero,
    /// `g = c u`
    Reaction { c: f64 },
    /// `g = grad u . w(t)` with `w(t) = velocity + t * acceleration`
    Advection {
        velocity: Vec<f64>,
        #[serde(default)]
        acceleration: Vec<f64>,
    },
    /// `g = target - u`, the negative L2 gradient of `E(u) = |u - target|^2 / 2`
    L2GradientFlow { target: Field },
}

impl BoundedPart {
    pub fn velocity(&self, t: f64, dim: usize) -> Vec<f64> {
        match self {
            BoundedPart::Advection { velocity, acceleration } => (0..dim)
                .map(|a| velocity[a] + t * acceleration.get(a).copied().unwrap_or(0.0))
                .collect(),
            _ => vec![0.0; dim],
        }
    }
}

/// User-supplied pointwise bounded term.
pub trait PointwiseTerm: Send + Sync + fmt::Debug {
    fn value(&self, t: f64, x: &[f64], u: f64, grad_u: &[f64]) -> f64;

    /// `(dg/du, dg/d(grad u))`.
    fn partials(&self, t: f64, x: &[f64], u: f64, grad_u: &[f64]) -> (f64, [f64; 2]);

    fn uses_gradient(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
enum Bounded {
    Builtin(BoundedPart),
    Custom(Arc<dyn PointwiseTerm>),
}

/// Which part of `f` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsPart {
    Full,
    Stiff,
    Bounded,
}

/// `f(t, x, u) = stiff(u) + g(t, x, u, grad u)` together with the declared
/// constants `C` (Lipschitz constant of the bounded part) and `C0` (affine
/// growth bound `|g(v)| <= C |v| + C0`).
#[derive(Debug, Clone)]
pub struct RhsOperator {
    domain: BoxDomain,
    stiff: StiffPart,
    bounded: Bounded,
    lipschitz: f64,
    affine: f64,
}

impl RhsOperator {
    pub fn new(domain: BoxDomain, stiff: StiffPart, bounded: BoundedPart, lipschitz: f64, affine: f64) -> Result<Self> {
        match &bounded {
            BoundedPart::Advection { velocity, acceleration } => {
                if velocity.len() != domain.dim() || !(acceleration.is_empty() || acceleration.len() == domain.dim()) {
                    return Err(Error::config("rhs.velocity", "need one component per axis"));
                }
            }
            BoundedPart::L2GradientFlow { target } => target.validate(&domain)?,
            BoundedPart::Reaction { c } if !c.is_finite() => {
                return Err(Error::config("rhs.c", "must be finite"));
            }
            _ => {}
        }
        Self::with_term(domain, stiff, Bounded::Builtin(bounded), lipschitz, affine)
    }

    pub fn custom(
        domain: BoxDomain,
        stiff: StiffPart,
        term: Arc<dyn PointwiseTerm>,
        lipschitz: f64,
        affine: f64,
    ) -> Result<Self> {
        Self::with_term(domain, stiff, Bounded::Custom(term), lipschitz, affine)
    }

    fn with_term(domain: BoxDomain, stiff: StiffPart, bounded: Bounded, lipschitz: f64, affine: f64) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::config("rhs.lipschitz", "must be finite and non-negative"));
        }
        if !(affine >= 0.0 && affine.is_finite()) {
            return Err(Error::config("rhs.affine", "must be finite and non-negative"));
        }
        Ok(Self {
            domain,
            stiff,
            bounded,
            lipschitz,
            affine,
        })
    }

    pub fn heat(domain: BoxDomain, reaction: f64) -> Result<Self> {
        let bounded = if reaction == 0.0 {
            BoundedPart::Zero
        } else {
            BoundedPart::Reaction { c: reaction }
        };
        Self::new(domain, StiffPart::Laplacian, bounded, reaction.abs(), 0.0)
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn stiff(&self) -> StiffPart {
        self.stiff
    }

    pub fn bounded(&self) -> Option<&BoundedPart> {
        match &self.bounded {
            Bounded::Builtin(b) => Some(b),
            Bounded::Custom(_) => None,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn affine(&self) -> f64 {
        self.affine
    }

    /// `lambda*` of the domain when the stiff part is the Laplacian.
    pub fn lambda_star(&self) -> Option<f64> {
        match self.stiff {
            StiffPart::Laplacian => Some(smallest_dirichlet_eigenvalue(&self.domain)),
            StiffPart::None => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.stiff == StiffPart::None && matches!(self.bounded, Bounded::Builtin(BoundedPart::Zero))
    }

    fn bounded_uses_gradient(&self) -> bool {
        match &self.bounded {
            Bounded::Builtin(BoundedPart::Advection { .. }) => true,
            Bounded::Builtin(_) => false,
            Bounded::Custom(term) => term.uses_gradient(),
        }
    }

    /// Jet order a model snapshot needs to evaluate `f` (or its parameter
    /// Jacobian when `jacobian` is set).
    pub fn required_order(&self, jacobian: bool) -> JetOrder {
        let spatial = self.stiff == StiffPart::Laplacian || self.bounded_uses_gradient();
        match (spatial, jacobian) {
            (false, _) => JetOrder::Theta,
            (true, false) => JetOrder::Spatial,
            (true, true) => JetOrder::Mixed,
        }
    }

    fn bounded_value(&self, t: f64, x: &[f64], u: f64, grad: &[f64]) -> f64 {
        match &self.bounded {
            Bounded::Builtin(b) => match b {
                BoundedPart::Zero => 0.0,
                BoundedPart::Reaction { c } => c * u,
                BoundedPart::Advection { .. } => {
                    let w = b.velocity(t, x.len());
                    grad.iter().zip(&w).map(|(g, wa)| g * wa).sum()
                }
                BoundedPart::L2GradientFlow { target } => target.jet(x, &self.domain).value - u,
            },
            Bounded::Custom(term) => term.value(t, x, u, grad),
        }
    }

    fn bounded_partials(&self, t: f64, x: &[f64], u: f64, grad: &[f64]) -> (f64, [f64; 2]) {
        match &self.bounded {
            Bounded::Builtin(b) => match b {
                BoundedPart::Zero => (0.0, [0.0; 2]),
                BoundedPart::Reaction { c } => (*c, [0.0; 2]),
                BoundedPart::Advection { .. } => {
                    let w = b.velocity(t, x.len());
                    let mut dg = [0.0; 2];
                    dg[..w.len()].copy_from_slice(&w);
                    (0.0, dg)
                }
                BoundedPart::L2GradientFlow { .. } => (-1.0, [0.0; 2]),
            },
            Bounded::Custom(term) => term.partials(t, x, u, grad),
        }
    }

    /// `f` (or one of its parts) from node samples of `u`, its gradient and Laplacian.
    pub fn eval_samples(
        &self,
        t: f64,
        nodes: &PointSet,
        values: &DVector<f64>,
        grad_x: &DMatrix<f64>,
        laplacian: &DVector<f64>,
        part: RhsPart,
    ) -> Result<DVector<f64>> {
        let n = nodes.len();
        if values.len() != n {
            return Err(Error::config("rhs", "sample count differs from node count"));
        }
        let stiff = part != RhsPart::Bounded && self.stiff == StiffPart::Laplacian;
        let bounded = part != RhsPart::Stiff;
        if stiff && laplacian.len() != n {
            return Err(Error::config("rhs", "operator needs the Laplacian of u"));
        }
        if bounded && self.bounded_uses_gradient() && grad_x.ncols() != n {
            return Err(Error::config("rhs", "operator needs the spatial gradient of u"));
        }
        let d = nodes.dim();
        let mut out = DVector::zeros(n);
        let mut g = [0.0; 2];
        for (j, x) in nodes.iter().enumerate() {
            let mut v = 0.0;
            if stiff {
                v += laplacian[j];
            }
            if bounded {
                if grad_x.ncols() == n && grad_x.nrows() == d {
                    for a in 0..d {
                        g[a] = grad_x[(a, j)];
                    }
                }
                v += self.bounded_value(t, x, values[j], &g[..d]);
            }
            out[j] = v;
        }
        ensure_finite(out.as_slice(), "right-hand side")?;
        Ok(out)
    }

    pub fn eval_field(&self, t: f64, nodes: &PointSet, samples: &FieldSamples, part: RhsPart) -> Result<DVector<f64>> {
        self.eval_samples(t, nodes, &samples.values, &samples.grad_x, &samples.laplacian, part)
    }

    pub fn eval_snapshot(&self, t: f64, nodes: &PointSet, snap: &ModelSnapshot, part: RhsPart) -> Result<DVector<f64>> {
        if self.required_order(false) > snap.order {
            snap.require_spatial()?;
        }
        self.eval_samples(t, nodes, &snap.values, &snap.grad_x, &snap.laplacian, part)
    }

    /// Parameter Jacobian `d f(t, x_q, u(theta)) / d theta` as a `p x n` matrix.
    pub fn jacobian_snapshot(&self, t: f64, nodes: &PointSet, snap: &ModelSnapshot, part: RhsPart) -> Result<DMatrix<f64>> {
        if self.required_order(true) == JetOrder::Mixed {
            snap.require_mixed()?;
        }
        let (p, n, d) = (snap.d_theta.nrows(), nodes.len(), nodes.dim());
        let mut out = DMatrix::zeros(p, n);
        if part != RhsPart::Bounded && self.stiff == StiffPart::Laplacian {
            out += &snap.d_theta_laplacian;
        }
        if part != RhsPart::Stiff {
            let uses_grad = self.bounded_uses_gradient();
            let mut g = [0.0; 2];
            for (j, x) in nodes.iter().enumerate() {
                if uses_grad {
                    for a in 0..d {
                        g[a] = snap.grad_x[(a, j)];
                    }
                }
                let (du, dgrad) = self.bounded_partials(t, x, snap.values[j], &g[..d]);
                let mut col = out.column_mut(j);
                if du != 0.0 {
                    col.axpy(du, &snap.d_theta.column(j), 1.0);
                }
                if uses_grad {
                    for a in 0..d {
                        if dgrad[a] != 0.0 {
                            col.axpy(dgrad[a], &snap.d_theta_grad_x[a].column(j), 1.0);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `f(t, x_q, u(theta, .))` at every quadrature node.
pub fn eval_rhs(
    op: &RhsOperator,
    t: f64,
    model: &dyn Parametrization,
    theta: &[f64],
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    eval_rhs_part(op, t, model, theta, rule, RhsPart::Full)
}

pub fn eval_rhs_part(
    op: &RhsOperator,
    t: f64,
    model: &dyn Parametrization,
    theta: &[f64],
    rule: &QuadratureRule,
    part: RhsPart,
) -> Result<DVector<f64>> {
    let snap = snapshot(model, theta, rule.nodes(), op.required_order(false))?;
    op.eval_snapshot(t, rule.nodes(), &snap, part)
}
