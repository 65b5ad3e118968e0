//! Tangent-space collapse diagnostics: Gram spectra, coinciding gradient
//! components, and persistence of duplicated kernels along a trajectory.

use serde::{Deserialize, Serialize};

use crate::discretization::Discretization;
use crate::dto::{run_dto, DtoOptions, DtoScheme, StartJitter};
use crate::error::{Error, Result};
use crate::gauss_newton::GaussNewtonOptions;
use crate::models::{grad_theta, ParamVector, Parametrization};
use crate::otd::{run_otd, OtdOptions};
use crate::quadrature::{assemble_gram, QuadratureRule};

/// Index groups `{i, j, ..}` whose gradient components coincide up to `tol`
/// relative to the larger of their M-norms. Groups are disjoint, sorted, and
/// have at least two members.
pub fn detect_duplicates(
    model: &dyn Parametrization,
    theta: &ParamVector,
    rule: &QuadratureRule,
    tol: f64,
) -> Result<Vec<Vec<usize>>> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::config("diagnostics.duplicate_tol", "must lie in (0, 1)"));
    }
    theta.check(model)?;
    let g = grad_theta(model, theta.as_slice(), rule.nodes())?;
    let p = g.nrows();
    let rows: Vec<_> = (0..p).map(|i| g.row(i).transpose()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| rule.norm_unchecked(r)).collect();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..p {
        for j in i + 1..p {
            let scale = norms[i].max(norms[j]);
            if scale > 0.0 && rule.norm_unchecked(&(&rows[i] - &rows[j])) < tol * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); p];
    for i in 0..p {
        let root = find(&mut parent, i);
        groups[root].push(i);
    }
    Ok(groups.into_iter().filter(|g| g.len() > 1).collect())
}

/// Largest coordinate spread `max_{i,j in group} |theta_i - theta_j|`.
pub fn group_spread(theta: &[f64], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let (lo, hi) = g
                .iter()
                .map(|&i| theta[i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub step: usize,
    pub time: f64,
    /// `sigma_min / sigma_max` of the Gram matrix
    pub condition_ratio: f64,
    pub effective_rank: usize,
    pub n_params: usize,
    pub duplicate_groups: Vec<Vec<usize>>,
    /// spread of the initial duplicate groups at this step
    pub initial_group_spread: f64,
    /// every initial group still coincides to within the persistence tolerance
    pub persistent: bool,
}

/// Stepper driving a collapse experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CollapseScheme {
    OtdExplicit,
    Dto {
        inner: GaussNewtonOptions,
        jitter: Option<StartJitter>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub dt: f64,
    pub n_steps: usize,
    pub scheme: CollapseScheme,
    /// relative tolerance for [`detect_duplicates`]
    pub duplicate_tol: f64,
    /// absolute tolerance on [`group_spread`]
    pub persistence_tol: f64,
}

impl CollapseOptions {
    pub fn explicit(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            scheme: CollapseScheme::OtdExplicit,
            duplicate_tol: 1e-8,
            persistence_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseRun {
    pub reports: Vec<CollapseReport>,
    pub initial_groups: Vec<Vec<usize>>,
    /// `theta_0..=theta_K`
    pub thetas: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// first step at which an initial group separates
    pub first_break: Option<usize>,
}

impl CollapseRun {
    pub fn persistent(&self) -> bool {
        self.first_break.is_none()
    }

    pub fn rank_constant(&self) -> bool {
        self.reports.windows(2).all(|w| w[0].effective_rank == w[1].effective_rank)
    }

    pub fn final_theta(&self) -> ParamVector {
        ParamVector::from_vector(nalgebra::DVector::from_vec(self.thetas.last().expect("non-empty").clone()))
    }
}

/// Runs `opts.scheme` from `theta0` and reports spectrum and duplicates at
/// every step. A separating group is recorded in `first_break`, not raised.
pub fn run_collapse_experiment(disc: &Discretization, theta0: &ParamVector, opts: &CollapseOptions) -> Result<CollapseRun> {
    let (times, thetas): (Vec<f64>, Vec<Vec<f64>>) = match opts.scheme {
        CollapseScheme::OtdExplicit => {
            let tr = run_otd(disc, theta0, 0.0, &OtdOptions::explicit(opts.dt, opts.n_steps))?;
            tr.records.into_iter().map(|r| (r.time, r.theta)).unzip()
        }
        CollapseScheme::Dto { inner, jitter } => {
            let mut o = DtoOptions::new(opts.dt, opts.n_steps, DtoScheme::Zeta { zeta: 1.0 }, inner);
            o.jitter = jitter;
            let tr = run_dto(disc, theta0, 0.0, &o)?;
            (tr.times(), tr.thetas().map(<[f64]>::to_vec).collect())
        }
    };
    analyze_collapse(disc, times, thetas, opts.duplicate_tol, opts.persistence_tol)
}

/// Collapse reports along a recorded trajectory `thetas[k]` at `times[k]`,
/// tracking the duplicate groups of `thetas[0]`.
pub fn analyze_collapse(
    disc: &Discretization,
    times: Vec<f64>,
    thetas: Vec<Vec<f64>>,
    duplicate_tol: f64,
    persistence_tol: f64,
) -> Result<CollapseRun> {
    let Some(first) = thetas.first() else {
        return Err(Error::config("diagnostics", "empty trajectory"));
    };
    let theta0 = ParamVector::new(first.clone(), disc.model)?;
    let initial_groups = detect_duplicates(disc.model, &theta0, disc.rule, duplicate_tol)?;
    let mut reports = Vec::with_capacity(thetas.len());
    let mut first_break = None;
    for (k, (t, th)) in times.iter().zip(&thetas).enumerate() {
        let theta = ParamVector::new(th.clone(), disc.model)?;
        let gram = assemble_gram(disc.model, th, disc.rule, disc.tau)?;
        let spread = group_spread(th, &initial_groups);
        let persistent = spread < persistence_tol;
        if !persistent && first_break.is_none() {
            first_break = Some(k);
        }
        reports.push(CollapseReport {
            step: k,
            time: *t,
            condition_ratio: gram.condition_ratio(),
            effective_rank: gram.effective_rank(),
            n_params: disc.n_params(),
            duplicate_groups: detect_duplicates(disc.model, &theta, disc.rule, duplicate_tol)?,
            initial_group_spread: spread,
            persistent,
        });
    }
    Ok(CollapseRun {
        reports,
        initial_groups,
        thetas,
        times,
        first_break,
    })
}
