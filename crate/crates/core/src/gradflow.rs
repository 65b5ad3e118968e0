//! L2 gradient flows and natural-gradient descent on the induced parameter
//! loss.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::Result;
use crate::models::{snapshot, JetOrder, ParamVector, Parametrization};
use crate::pde::{BoundedPart, Field, RhsOperator, StiffPart};
use crate::quadrature::{gram_from_gradients, moment_from_gradients, solve_min_norm, QuadratureRule};

/// `E(u) = |u - target|^2 / 2`, evaluated in a quadrature M-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFunctional {
    pub target: Field,
    pub domain: BoxDomain,
}

impl EnergyFunctional {
    pub fn l2(domain: BoxDomain, target: Field) -> Result<Self> {
        target.validate(&domain)?;
        Ok(Self { target, domain })
    }

    pub fn target_values(&self, rule: &QuadratureRule) -> DVector<f64> {
        self.target.values(rule.nodes(), &self.domain)
    }

    /// Node values of the function-space gradient `u(theta) - target`.
    pub fn function_gradient(&self, model: &dyn Parametrization, theta: &ParamVector, rule: &QuadratureRule) -> Result<DVector<f64>> {
        theta.check(model)?;
        let u = snapshot(model, theta.as_slice(), rule.nodes(), JetOrder::Value)?.values;
        Ok(u - self.target_values(rule))
    }

    /// `L(theta) = E(u(theta))`
    pub fn loss(&self, model: &dyn Parametrization, theta: &ParamVector, rule: &QuadratureRule) -> Result<f64> {
        let g = self.function_gradient(model, theta, rule)?;
        Ok(0.5 * rule.inner(&g, &g)?)
    }

    /// `grad_theta L = <grad_theta u, u - target>_M`
    pub fn loss_gradient(&self, model: &dyn Parametrization, theta: &ParamVector, rule: &QuadratureRule) -> Result<DVector<f64>> {
        let g = self.function_gradient(model, theta, rule)?;
        let snap = snapshot(model, theta.as_slice(), rule.nodes(), JetOrder::Theta)?;
        moment_from_gradients(&snap.d_theta, &g, rule)
    }

    /// The flow `u_t = -grad_u E(u)` as a right-hand side operator.
    pub fn flow_operator(&self) -> Result<RhsOperator> {
        RhsOperator::new(
            self.domain.clone(),
            StiffPart::None,
            BoundedPart::L2GradientFlow {
                target: self.target.clone(),
            },
            1.0,
            0.0,
        )
    }
}

/// `-grad_u E` at `u(theta)` on the nodes.
pub fn gradient_flow_rhs(
    energy: &EnergyFunctional,
    model: &dyn Parametrization,
    theta: &ParamVector,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    Ok(-energy.function_gradient(model, theta, rule)?)
}

/// `theta - dt P(theta)^+ grad_theta L(theta)` with both factors in one M-norm.
pub fn natural_gradient_step(
    model: &dyn Parametrization,
    theta: &ParamVector,
    energy: &EnergyFunctional,
    dt: f64,
    rule: &QuadratureRule,
    tau: f64,
) -> Result<ParamVector> {
    natural_gradient_step_with_metric(model, theta, energy, dt, rule, rule, tau)
}

/// As [`natural_gradient_step`], with the Gram matrix assembled in
/// `metric_rule` and the loss gradient in `energy_rule`.
pub fn natural_gradient_step_with_metric(
    model: &dyn Parametrization,
    theta: &ParamVector,
    energy: &EnergyFunctional,
    dt: f64,
    metric_rule: &QuadratureRule,
    energy_rule: &QuadratureRule,
    tau: f64,
) -> Result<ParamVector> {
    let grad = energy.loss_gradient(model, theta, energy_rule)?;
    let snap = snapshot(model, theta.as_slice(), metric_rule.nodes(), JetOrder::Theta)?;
    let gram = gram_from_gradients(&snap.d_theta, metric_rule, tau)?;
    let direction = solve_min_norm(&gram, &grad, tau)?.x;
    Ok(ParamVector::from_vector(theta.vector() - direction * dt))
}
