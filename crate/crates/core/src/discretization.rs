use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::models::{snapshot, JetOrder, ModelSnapshot, Parametrization};
use crate::pde::{RhsOperator, RhsPart};
use crate::quadrature::QuadratureRule;

/// What to do when the Gram matrix loses rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularPolicy {
    /// take the minimal-norm solution
    #[default]
    MinNorm,
    /// fail with [`crate::Error::RankDeficient`]
    Error,
}

/// Model, inner product and right-hand side shared by all time steppers.
#[derive(Debug, Clone, Copy)]
pub struct Discretization<'a> {
    pub model: &'a dyn Parametrization,
    pub rule: &'a QuadratureRule,
    pub rhs: &'a RhsOperator,
    /// relative truncation threshold on the Gram spectrum
    pub tau: f64,
}

impl<'a> Discretization<'a> {
    pub fn new(model: &'a dyn Parametrization, rule: &'a QuadratureRule, rhs: &'a RhsOperator, tau: f64) -> Self {
        Self { model, rule, rhs, tau }
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    pub fn snapshot(&self, theta: &[f64], order: JetOrder) -> Result<ModelSnapshot> {
        snapshot(self.model, theta, self.rule.nodes(), order)
    }

    pub fn values(&self, theta: &[f64]) -> Result<DVector<f64>> {
        Ok(self.snapshot(theta, JetOrder::Value)?.values)
    }

    pub fn rhs_at(&self, t: f64, snap: &ModelSnapshot) -> Result<DVector<f64>> {
        self.rhs.eval_snapshot(t, self.rule.nodes(), snap, RhsPart::Full)
    }

    pub fn rhs_part_at(&self, t: f64, snap: &ModelSnapshot, part: RhsPart) -> Result<DVector<f64>> {
        self.rhs.eval_snapshot(t, self.rule.nodes(), snap, part)
    }

    pub fn rhs_jacobian_at(&self, t: f64, snap: &ModelSnapshot, part: RhsPart) -> Result<DMatrix<f64>> {
        self.rhs.jacobian_snapshot(t, self.rule.nodes(), snap, part)
    }

    pub fn norm(&self, values: &DVector<f64>) -> f64 {
        self.rule.norm_unchecked(values)
    }

    /// `sqrt(w)`-weighted `n x p` sample matrix of a `p x n` block.
    pub fn weighted_jacobian(&self, d_theta: &DMatrix<f64>) -> DMatrix<f64> {
        crate::quadrature::weighted_jacobian(d_theta, self.rule)
    }

    pub fn weighted(&self, values: &DVector<f64>) -> DVector<f64> {
        values.component_mul(self.rule.sqrt_weights())
    }
}
