//! Nonlinear parametrizations `u(theta, x)` with analytic derivatives in the
//! parameters and in space.
//!
//! Every model exposes a per-point [`PointJet`] holding the value, the
//! spatial gradient and Laplacian, the parameter gradient, and the mixed
//! parameter/space derivatives needed by implicit schemes. Batch evaluation
//! over a [`PointSet`] goes through [`snapshot`].

mod gaussian;
mod mask;
mod shallow;

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::PointSet;
use crate::error::{ensure_finite, Error, Result};

pub use gaussian::{gaussian_bump, GaussianMixture};
pub use mask::{BoundaryMask, MaskKind, Masked};
pub use shallow::ShallowNetwork;

/// Parameter vector `theta` of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    /// Checks the length against the model and that all entries are finite.
    pub fn new(values: Vec<f64>, model: &dyn Parametrization) -> Result<Self> {
        let theta = Self(DVector::from_vec(values));
        theta.check(model)?;
        Ok(theta)
    }

    pub fn from_vector(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn check(&self, model: &dyn Parametrization) -> Result<()> {
        if self.0.len() != model.n_params() {
            return Err(Error::config(
                "theta",
                format!(
                    "model {} expects {} parameters, got {}",
                    model.describe(),
                    model.n_params(),
                    self.0.len()
                ),
            ));
        }
        ensure_finite(self.0.as_slice(), "parameter vector")
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }
}

impl Deref for ParamVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// How much of a [`PointJet`] to fill. Each level includes the previous ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetOrder {
    Value,
    /// value and parameter gradient
    Theta,
    /// plus spatial gradient and Laplacian
    Spatial,
    /// plus parameter derivatives of the spatial gradient and Laplacian
    Mixed,
}

/// Derivatives of `u(theta, .)` at one spatial point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointJet {
    pub value: f64,
    /// `d` entries
    pub grad_x: Vec<f64>,
    pub laplacian: f64,
    /// `p` entries
    pub d_theta: Vec<f64>,
    /// `p * d` entries, parameter-major: `d_theta_grad_x[i * d + a]`
    pub d_theta_grad_x: Vec<f64>,
    /// `p` entries
    pub d_theta_laplacian: Vec<f64>,
}

impl PointJet {
    pub fn new(p: usize, d: usize) -> Self {
        Self {
            value: 0.0,
            grad_x: vec![0.0; d],
            laplacian: 0.0,
            d_theta: vec![0.0; p],
            d_theta_grad_x: vec![0.0; p * d],
            d_theta_laplacian: vec![0.0; p],
        }
    }

    pub fn clear(&mut self) {
        self.value = 0.0;
        self.laplacian = 0.0;
        self.grad_x.iter_mut().for_each(|v| *v = 0.0);
        self.d_theta.iter_mut().for_each(|v| *v = 0.0);
        self.d_theta_grad_x.iter_mut().for_each(|v| *v = 0.0);
        self.d_theta_laplacian.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A parametrization `u(theta, .): Omega -> R`.
///
/// Implementations must be pure: identical inputs give bitwise-identical
/// outputs, independent of call order or thread.
pub trait Parametrization: Send + Sync + fmt::Debug {
    fn n_params(&self) -> usize;

    fn dim(&self) -> usize;

    /// Fills `jet` up to `order` at point `x`. `jet` is sized for this model
    /// and arrives cleared.
    fn point_jet(&self, theta: &[f64], x: &[f64], order: JetOrder, jet: &mut PointJet);

    /// Parameter Hessian applied to `v`: `out_i = sum_j v_j d^2 u / (d theta_i d theta_j)`.
    fn hessian_vec(&self, theta: &[f64], x: &[f64], v: &[f64], out: &mut [f64]);

    /// Structural guarantee that `u(theta, .)` lies in the span of its own
    /// parameter-gradient components for every `theta` (e.g. a linear output layer).
    fn contains_self_in_tangent(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

pub type SharedModel = Arc<dyn Parametrization>;

/// Batch evaluation of a model over a point set.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub order: JetOrder,
    pub values: DVector<f64>,
    /// `p x n`
    pub d_theta: DMatrix<f64>,
    /// `d x n`
    pub grad_x: DMatrix<f64>,
    pub laplacian: DVector<f64>,
    /// one `p x n` matrix per spatial axis
    pub d_theta_grad_x: Vec<DMatrix<f64>>,
    /// `p x n`
    pub d_theta_laplacian: DMatrix<f64>,
}

impl ModelSnapshot {
    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    fn require(&self, order: JetOrder, what: &str) -> Result<()> {
        if self.order < order {
            return Err(Error::config(
                "snapshot",
                format!("{what} requires jet order {order:?}, snapshot has {:?}", self.order),
            ));
        }
        Ok(())
    }

    pub fn require_spatial(&self) -> Result<()> {
        self.require(JetOrder::Spatial, "spatial derivatives")
    }

    pub fn require_mixed(&self) -> Result<()> {
        self.require(JetOrder::Mixed, "mixed derivatives")
    }
}

fn check_inputs(model: &dyn Parametrization, theta: &[f64], points: &PointSet) -> Result<()> {
    if theta.len() != model.n_params() {
        return Err(Error::config(
            "theta",
            format!("model {} expects {} parameters, got {}", model.describe(), model.n_params(), theta.len()),
        ));
    }
    if points.dim() != model.dim() {
        return Err(Error::config(
            "points",
            format!("model dimension {} but points have dimension {}", model.dim(), points.dim()),
        ));
    }
    ensure_finite(theta, "parameter vector")
}

/// Evaluates the model and its derivatives up to `order` at every point.
pub fn snapshot(
    model: &dyn Parametrization,
    theta: &[f64],
    points: &PointSet,
    order: JetOrder,
) -> Result<ModelSnapshot> {
    check_inputs(model, theta, points)?;
    let (p, d, n) = (model.n_params(), model.dim(), points.len());
    let theta_cols = order >= JetOrder::Theta;
    let spatial = order >= JetOrder::Spatial;
    let mixed = order >= JetOrder::Mixed;
    let mut snap = ModelSnapshot {
        order,
        values: DVector::zeros(n),
        d_theta: DMatrix::zeros(if theta_cols { p } else { 0 }, n),
        grad_x: DMatrix::zeros(if spatial { d } else { 0 }, n),
        laplacian: DVector::zeros(if spatial { n } else { 0 }),
        d_theta_grad_x: if mixed { vec![DMatrix::zeros(p, n); d] } else { Vec::new() },
        d_theta_laplacian: DMatrix::zeros(if mixed { p } else { 0 }, n),
    };
    let mut jet = PointJet::new(p, d);
    for (j, x) in points.iter().enumerate() {
        jet.clear();
        model.point_jet(theta, x, order, &mut jet);
        snap.values[j] = jet.value;
        if theta_cols {
            snap.d_theta.column_mut(j).copy_from_slice(&jet.d_theta);
        }
        if spatial {
            snap.grad_x.column_mut(j).copy_from_slice(&jet.grad_x);
            snap.laplacian[j] = jet.laplacian;
        }
        if mixed {
            for i in 0..p {
                for a in 0..d {
                    snap.d_theta_grad_x[a][(i, j)] = jet.d_theta_grad_x[i * d + a];
                }
            }
            snap.d_theta_laplacian.column_mut(j).copy_from_slice(&jet.d_theta_laplacian);
        }
    }
    ensure_finite(snap.values.as_slice(), "model values")?;
    ensure_finite(snap.d_theta.as_slice(), "parameter gradient")?;
    Ok(snap)
}

/// `u(theta, x_j)` for every point.
pub fn eval(model: &dyn Parametrization, theta: &[f64], points: &PointSet) -> Result<DVector<f64>> {
    Ok(snapshot(model, theta, points, JetOrder::Value)?.values)
}

/// Parameter gradient, `p x n_points`.
pub fn grad_theta(model: &dyn Parametrization, theta: &[f64], points: &PointSet) -> Result<DMatrix<f64>> {
    Ok(snapshot(model, theta, points, JetOrder::Theta)?.d_theta)
}

/// Spatial gradient, `d x n_points`.
pub fn grad_x(model: &dyn Parametrization, theta: &[f64], points: &PointSet) -> Result<DMatrix<f64>> {
    Ok(snapshot(model, theta, points, JetOrder::Spatial)?.grad_x)
}

pub fn laplacian(model: &dyn Parametrization, theta: &[f64], points: &PointSet) -> Result<DVector<f64>> {
    Ok(snapshot(model, theta, points, JetOrder::Spatial)?.laplacian)
}

/// Hessian-vector products in `theta` at every point, `p x n_points`.
pub fn hessian_vec(
    model: &dyn Parametrization,
    theta: &[f64],
    v: &[f64],
    points: &PointSet,
) -> Result<DMatrix<f64>> {
    check_inputs(model, theta, points)?;
    if v.len() != model.n_params() {
        return Err(Error::config("direction", "length differs from parameter count"));
    }
    let p = model.n_params();
    let mut out = DMatrix::zeros(p, points.len());
    let mut buf = vec![0.0; p];
    for (j, x) in points.iter().enumerate() {
        buf.iter_mut().for_each(|b| *b = 0.0);
        model.hessian_vec(theta, x, v, &mut buf);
        out.column_mut(j).copy_from_slice(&buf);
    }
    Ok(out)
}

/// Declarative model description, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    GaussianMixture {
        n: usize,
        bandwidth: f64,
        #[serde(default)]
        trainable_bandwidth: bool,
    },
    ShallowNetwork {
        n: usize,
    },
}

impl ModelSpec {
    /// Builds the model for spatial dimension `dim`, wrapped in `mask`.
    pub fn build(&self, dim: usize, mask: &BoundaryMask) -> Result<SharedModel> {
        let base: Box<dyn Parametrization> = match *self {
            ModelSpec::GaussianMixture {
                n,
                bandwidth,
                trainable_bandwidth,
            } => Box::new(GaussianMixture::new(n, dim, bandwidth, trainable_bandwidth)?),
            ModelSpec::ShallowNetwork { n } => Box::new(ShallowNetwork::new(n, dim)?),
        };
        Ok(match mask.kind {
            MaskKind::None => Arc::from(base),
            MaskKind::HomogeneousDirichlet => Arc::new(Masked::new(base, mask.clone())?),
        })
    }

    pub fn n_units(&self) -> usize {
        match *self {
            ModelSpec::GaussianMixture { n, .. } | ModelSpec::ShallowNetwork { n } => n,
        }
    }

    pub fn with_n_units(&self, n_new: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::GaussianMixture { n, .. } | ModelSpec::ShallowNetwork { n } => *n = n_new,
        }
        s
    }
}
