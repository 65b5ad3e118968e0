use nalgebra::DVector;

use super::config::{ExperimentConfig, ProblemConfig, ReferenceConfig};
use crate::domain::{BoxDomain, PointSet};
use crate::error::{Error, Result};
use crate::fit::{fit_initial, seeded_start};
use crate::gauss_newton::GaussNewtonOptions;
use crate::gradflow::EnergyFunctional;
use crate::models::{eval, BoundaryMask, MaskKind, ModelSpec, ParamVector, SharedModel};
use crate::pde::{
    BoundedPart, Field, FineGridHeat, HeatScheme, ReferenceSolution, Relaxation,
    RhsOperator, SineSeriesHeat, StiffPart, Transport,
};
use crate::quadrature::{QuadratureRule, QuadratureSpec};
use crate::Discretization;

/// Constants entering the bounds and envelopes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundConstants {
    /// Lipschitz constant of the bounded part
    pub c: f64,
    /// affine offset in `|f(v)| <= c |v| + c0`
    pub c0: f64,
    /// smallest Dirichlet eigenvalue, when the stiff part is the Laplacian
    pub lambda_star: Option<f64>,
}

/// Everything a run needs, built from an [`ExperimentConfig`].
#[derive(Debug)]
pub struct Problem {
    pub domain: BoxDomain,
    pub model: SharedModel,
    pub rule: QuadratureRule,
    pub rhs: RhsOperator,
    pub theta0: ParamVector,
    /// `|u_0 - u(theta_0)|_M` against the initial condition the reference starts from
    pub initial_fit_residual: f64,
    pub reference: Option<Box<dyn ReferenceSolution>>,
    pub energy: Option<EnergyFunctional>,
    pub constants: BoundConstants,
    pub tau: f64,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let domain = cfg.problem.domain();
        let dim = domain.dim();
        let mask = match cfg.mask() {
            MaskKind::None => BoundaryMask::none(domain.clone()),
            MaskKind::HomogeneousDirichlet => BoundaryMask::dirichlet(domain.clone()),
        };
        let model = cfg.model.spec.build(dim, &mask)?;
        let rule = cfg.quadrature.clone().unwrap_or_else(|| default_quadrature(&cfg.problem)).build(&domain)?;
        let rhs = build_rhs(&cfg.problem, &domain)?;
        let energy = match &cfg.problem {
            ProblemConfig::GradientFlow { target, .. } => Some(EnergyFunctional::l2(domain.clone(), target.clone())?),
            _ => None,
        };
        let tau = cfg.solver.tau;

        let (theta0, initial_fit_residual, initial) = match &cfg.problem {
            ProblemConfig::Collapse {
                center,
                weight,
                perturbation,
                ..
            } => {
                let theta = collapsed_start(&cfg.model.spec, dim, *center, *weight, *perturbation)?;
                let theta = ParamVector::new(theta, model.as_ref())?;
                (theta, 0.0, None)
            }
            _ => {
                let field = cfg.initial_field();
                let target = field.values(rule.nodes(), &domain);
                let theta = match &cfg.initial.theta {
                    Some(theta) => ParamVector::new(theta.clone(), model.as_ref())?,
                    None => {
                        let start = seeded_start(&cfg.model.spec, &domain, |x| field.jet(x, &domain).value, cfg.seed)?;
                        let opts = GaussNewtonOptions {
                            max_iterations: cfg.initial.fit_iterations.max(1),
                            tolerance: 1e-12,
                            ..GaussNewtonOptions::default()
                        };
                        let start = ParamVector::new(start, model.as_ref())?;
                        let fit = fit_initial(&cfg.model.spec, model.as_ref(), &target, &rule, &start, tau, &opts)?;
                        ParamVector::from_vector(fit.theta)
                    }
                };
                let residual = rule.norm(&(eval(model.as_ref(), theta.as_slice(), rule.nodes())? - target))?;
                (theta, residual, Some(field))
            }
        };

        let reference = build_reference(cfg, &domain, &model, &theta0, initial.as_ref())?;
        let constants = BoundConstants {
            c: cfg.bounds.c.unwrap_or(match &cfg.problem {
                ProblemConfig::Heat { reaction, .. } | ProblemConfig::Collapse { reaction, .. } => reaction.abs(),
                ProblemConfig::Advection { .. } => 0.0,
                ProblemConfig::GradientFlow { .. } => 1.0,
            }),
            c0: cfg.bounds.c0.unwrap_or(match &energy {
                Some(e) => rule.norm(&e.target_values(&rule))?,
                None => 0.0,
            }),
            lambda_star: cfg.bounds.lambda_star.or(rhs.lambda_star()),
        };
        Ok(Self {
            domain,
            model,
            rule,
            rhs,
            theta0,
            initial_fit_residual,
            reference,
            energy,
            constants,
            tau,
        })
    }

    pub fn discretization(&self) -> Discretization<'_> {
        Discretization::new(self.model.as_ref(), &self.rule, &self.rhs, self.tau)
    }

    /// `|u(t) - u(theta)|_M`, when a reference exists.
    pub fn error(&self, t: f64, theta: &[f64]) -> Result<Option<f64>> {
        let Some(reference) = &self.reference else {
            return Ok(None);
        };
        let exact = reference.values(t, self.rule.nodes())?;
        let approx = eval(self.model.as_ref(), theta, self.rule.nodes())?;
        Ok(Some(self.rule.norm(&(exact - approx))?))
    }
}

fn default_quadrature(problem: &ProblemConfig) -> QuadratureSpec {
    let nodes = match problem {
        ProblemConfig::Advection { .. } => Some(128),
        _ => None,
    };
    QuadratureSpec::GaussLegendre { nodes_per_dim: nodes }
}

fn build_rhs(problem: &ProblemConfig, domain: &BoxDomain) -> Result<RhsOperator> {
    match problem {
        ProblemConfig::Advection {
            velocity, acceleration, ..
        } => RhsOperator::new(
            domain.clone(),
            StiffPart::None,
            BoundedPart::Advection {
                velocity: velocity.clone(),
                acceleration: acceleration.clone(),
            },
            0.0,
            0.0,
        ),
        ProblemConfig::Heat { reaction, .. } | ProblemConfig::Collapse { reaction, .. } => {
            RhsOperator::heat(domain.clone(), *reaction)
        }
        ProblemConfig::GradientFlow { target, .. } => RhsOperator::new(
            domain.clone(),
            StiffPart::None,
            BoundedPart::L2GradientFlow { target: target.clone() },
            1.0,
            0.0,
        ),
    }
}

/// `n` kernels at `center` with weight `weight`; the last center is shifted
/// by `perturbation`.
pub fn collapsed_start(spec: &ModelSpec, dim: usize, center: f64, weight: f64, perturbation: f64) -> Result<Vec<f64>> {
    let ModelSpec::GaussianMixture {
        n,
        bandwidth,
        trainable_bandwidth,
    } = *spec
    else {
        return Err(Error::config("model.kind", "identical kernels need a gaussian-mixture model"));
    };
    let mut theta = vec![center; n * dim];
    if let Some(last) = theta.get_mut((n - 1) * dim) {
        *last += perturbation;
    }
    theta.extend(std::iter::repeat_n(weight, n));
    if trainable_bandwidth {
        theta.extend(std::iter::repeat_n(bandwidth, n));
    }
    Ok(theta)
}

fn build_reference(
    cfg: &ExperimentConfig,
    domain: &BoxDomain,
    model: &SharedModel,
    theta0: &ParamVector,
    initial: Option<&Field>,
) -> Result<Option<Box<dyn ReferenceSolution>>> {
    let analytic: Option<Box<dyn ReferenceSolution>> = match (&cfg.problem, initial) {
        (
            ProblemConfig::Advection {
                velocity, acceleration, ..
            },
            Some(field),
        ) => Some(Box::new(Transport {
            domain: domain.clone(),
            profile: field.clone(),
            velocity: velocity.clone(),
            acceleration: acceleration.clone(),
        })),
        (ProblemConfig::Heat { reaction, .. }, Some(field @ (Field::SineSeries { .. } | Field::Zero))) => {
            Some(Box::new(SineSeriesHeat::new(domain.clone(), field, *reaction)?))
        }
        (ProblemConfig::GradientFlow { target, .. }, Some(field)) => Some(Box::new(Relaxation {
            domain: domain.clone(),
            initial: field.clone(),
            target: target.clone(),
        })),
        _ => None,
    };
    let fine_grid = |n_cells: usize, substeps: usize, scheme: HeatScheme| -> Result<Option<Box<dyn ReferenceSolution>>> {
        let reaction = match &cfg.problem {
            ProblemConfig::Heat { reaction, .. } | ProblemConfig::Collapse { reaction, .. } => *reaction,
            _ => return Err(Error::config("reference.kind", "the fine-grid reference solves heat problems only")),
        };
        let u0 = |x: f64| -> f64 {
            match initial {
                Some(field) => field.jet(&[x], domain).value,
                None => eval(model.as_ref(), theta0.as_slice(), &PointSet::from_1d(&[x]))
                    .map(|v: DVector<f64>| v[0])
                    .unwrap_or(f64::NAN),
            }
        };
        let grid = FineGridHeat::solve(
            domain,
            u0,
            reaction,
            cfg.time.t_final,
            n_cells,
            cfg.time.dt,
            substeps,
            scheme,
        )?;
        Ok(Some(Box::new(grid)))
    };
    match cfg.reference {
        ReferenceConfig::None => Ok(None),
        ReferenceConfig::Analytic => match analytic {
            Some(r) => Ok(Some(r)),
            None => Err(Error::config("reference.kind", "no analytic solution for this problem and initial condition")),
        },
        ReferenceConfig::FineGrid {
            n_cells,
            substeps,
            scheme,
        } => fine_grid(n_cells, substeps, scheme),
        ReferenceConfig::Auto => match analytic {
            Some(r) => Ok(Some(r)),
            None if domain.dim() == 1
                && matches!(cfg.problem, ProblemConfig::Heat { .. } | ProblemConfig::Collapse { .. }) =>
            {
                fine_grid(1024, 4, HeatScheme::CrankNicolson)
            }
            None => Ok(None),
        },
    }
}
