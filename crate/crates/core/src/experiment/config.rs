use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::SingularPolicy;
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::gauss_newton::GaussNewtonOptions;
use crate::models::{MaskKind, ModelSpec};
use crate::pde::{Field, HeatScheme, SineMode};
use crate::quadrature::QuadratureSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: problem, model, scheme, discretization and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `du/dt = grad u . (velocity + acceleration t)` on a window
    Advection {
        #[serde(default)]
        domain: Option<BoxDomain>,
        #[serde(default = "default_velocity")]
        velocity: Vec<f64>,
        #[serde(default = "default_acceleration")]
        acceleration: Vec<f64>,
    },
    /// `du/dt = Laplace u + reaction u` with homogeneous Dirichlet conditions
    Heat {
        #[serde(default)]
        domain: Option<BoxDomain>,
        #[serde(default)]
        reaction: f64,
    },
    /// `du/dt = target - u`
    GradientFlow {
        #[serde(default)]
        domain: Option<BoxDomain>,
        target: Field,
    },
    /// Heat problem started from `n` identical kernels
    Collapse {
        #[serde(default)]
        domain: Option<BoxDomain>,
        #[serde(default)]
        reaction: f64,
        #[serde(default = "default_collapse_center")]
        center: f64,
        #[serde(default = "default_collapse_weight")]
        weight: f64,
        /// shift of the last kernel's center; zero keeps the start degenerate
        #[serde(default)]
        perturbation: f64,
    },
}

fn default_velocity() -> Vec<f64> {
    vec![1.0]
}

fn default_acceleration() -> Vec<f64> {
    vec![0.5]
}

fn default_collapse_center() -> f64 {
    0.5
}

fn default_collapse_weight() -> f64 {
    0.25
}

impl ProblemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Advection { .. } => "advection",
            ProblemConfig::Heat { .. } => "heat",
            ProblemConfig::GradientFlow { .. } => "gradient-flow",
            ProblemConfig::Collapse { .. } => "collapse",
        }
    }

    pub fn domain(&self) -> BoxDomain {
        let (given, fallback) = match self {
            ProblemConfig::Advection { domain, .. } => (domain, BoxDomain { lo: vec![-6.0], hi: vec![6.0] }),
            ProblemConfig::Heat { domain, .. }
            | ProblemConfig::GradientFlow { domain, .. }
            | ProblemConfig::Collapse { domain, .. } => (domain, BoxDomain::unit(1)),
        };
        given.clone().unwrap_or(fallback)
    }

    pub fn default_mask(&self) -> MaskKind {
        match self {
            ProblemConfig::Heat { .. } | ProblemConfig::Collapse { .. } => MaskKind::HomogeneousDirichlet,
            _ => MaskKind::None,
        }
    }

    pub fn default_initial(&self) -> Field {
        match self {
            ProblemConfig::Advection { .. } => Field::Gaussian {
                center: vec![0.0; self.domain().dim()],
                width: 0.5,
                amplitude: 1.0,
            },
            ProblemConfig::Heat { .. } | ProblemConfig::Collapse { .. } => Field::SineSeries {
                modes: vec![
                    SineMode {
                        amplitude: 1.0,
                        wavenumbers: vec![1; self.domain().dim()],
                    },
                    SineMode {
                        amplitude: 0.5,
                        wavenumbers: std::iter::once(2).chain(std::iter::repeat(1)).take(self.domain().dim()).collect(),
                    },
                ],
            },
            ProblemConfig::GradientFlow { .. } => Field::Gaussian {
                center: vec![0.5; self.domain().dim()],
                width: 0.2,
                amplitude: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub spec: ModelSpec,
    /// defaults to Dirichlet for heat-type problems
    #[serde(default)]
    pub mask: Option<MaskKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeConfig {
    OtdExplicit {},
    OtdZeta {
        zeta: f64,
        #[serde(default)]
        inner: GaussNewtonOptions,
    },
    DtoGn {
        #[serde(default = "one")]
        zeta: f64,
        #[serde(default)]
        inner: GaussNewtonOptions,
        /// uniform start perturbation of each Gauss-Newton solve
        #[serde(default)]
        jitter: f64,
    },
    DtoImex {
        #[serde(default)]
        inner: GaussNewtonOptions,
    },
    Ngd {},
}

fn one() -> f64 {
    1.0
}

impl SchemeConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeConfig::OtdExplicit {} => "otd-explicit",
            SchemeConfig::OtdZeta { .. } => "otd-zeta",
            SchemeConfig::DtoGn { .. } => "dto-gn",
            SchemeConfig::DtoImex { .. } => "dto-imex",
            SchemeConfig::Ngd {} => "ngd",
        }
    }

    pub fn inner(&self) -> Option<&GaussNewtonOptions> {
        match self {
            SchemeConfig::OtdZeta { inner, .. } | SchemeConfig::DtoGn { inner, .. } | SchemeConfig::DtoImex { inner } => {
                Some(inner)
            }
            _ => None,
        }
    }

    pub fn inner_mut(&mut self) -> Option<&mut GaussNewtonOptions> {
        match self {
            SchemeConfig::OtdZeta { inner, .. } | SchemeConfig::DtoGn { inner, .. } | SchemeConfig::DtoImex { inner } => {
                Some(inner)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
}

impl TimeConfig {
    /// `round(t_final / dt)`
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// initial condition; a per-problem default when absent
    #[serde(default)]
    pub field: Option<Field>,
    /// explicit initial parameter, skipping the fit
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_fit_iterations")]
    pub fit_iterations: usize,
}

fn default_fit_iterations() -> usize {
    200
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            field: None,
            theta: None,
            fit_iterations: default_fit_iterations(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// relative truncation threshold on the Gram spectrum
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub singular_policy: SingularPolicy,
}

fn default_tau() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            singular_policy: SingularPolicy::MinNorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// analytic when available, otherwise the fine-grid solver
    #[default]
    Auto,
    None,
    Analytic,
    FineGrid {
        #[serde(default = "default_cells")]
        n_cells: usize,
        #[serde(default = "default_substeps")]
        substeps: usize,
        #[serde(default)]
        scheme: HeatScheme,
    },
}

fn default_cells() -> usize {
    1024
}

fn default_substeps() -> usize {
    4
}

/// Source of the time-integration errors entering the DtO bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeErrorConfig {
    #[default]
    Oracle,
    Assumed {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Lipschitz (or affine growth) constant of the bounded part
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub lambda_star: Option<f64>,
    /// free parameters of the stationary-point envelopes
    #[serde(default = "default_eps")]
    pub eps_param: Vec<f64>,
    #[serde(default)]
    pub time_error: TimeErrorConfig,
}

fn default_eps() -> Vec<f64> {
    vec![0.1, 1.0]
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            c: None,
            c0: None,
            lambda_star: None,
            eps_param: default_eps(),
            time_error: TimeErrorConfig::Oracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_dup_tol")]
    pub duplicate_tol: f64,
    #[serde(default = "default_persistence_tol")]
    pub persistence_tol: f64,
    /// largest first-order violation at which a DtO step counts as stationary
    #[serde(default = "default_stationarity_tol")]
    pub stationarity_tol: f64,
}

fn default_dup_tol() -> f64 {
    1e-8
}

fn default_persistence_tol() -> f64 {
    1e-10
}

fn default_stationarity_tol() -> f64 {
    1e-8
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            duplicate_tol: default_dup_tol(),
            persistence_tol: default_persistence_tol(),
            stationarity_tol: default_stationarity_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// relative to the output root
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// record spectra every this many steps
    #[serde(default = "default_stride")]
    pub spectra_stride: usize,
}

fn default_stride() -> usize {
    10
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            spectra_stride: default_stride(),
        }
    }
}

/// Environment variable overriding the directory all outputs are written under.
pub const OUTPUT_ROOT_ENV: &str = "SEQTRAIN_OUTPUT_ROOT";

/// Dotted path of the first key in `given` that a parse-and-serialize round
/// trip drops. Catches keys that unit variants and flattened tables would
/// otherwise swallow silently.
fn first_unknown_key(given: &toml::Table, echoed: &toml::Table, prefix: &str) -> Option<String> {
    given.iter().find_map(|(key, value)| {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, echoed.get(key)) {
            (_, None) => Some(path),
            (toml::Value::Table(g), Some(toml::Value::Table(e))) => first_unknown_key(g, e, &path),
            (toml::Value::Array(g), Some(toml::Value::Array(e))) => g.iter().zip(e).enumerate().find_map(|(i, pair)| match pair {
                (toml::Value::Table(g), toml::Value::Table(e)) => first_unknown_key(g, e, &format!("{path}[{i}]")),
                _ => None,
            }),
            _ => None,
        }
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let given: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let cfg: Self = given.clone().try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let echoed = toml::Table::try_from(&cfg).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(key) = first_unknown_key(&given, &echoed, "") {
            return Err(Error::config(key, "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let domain = self.problem.domain();
        domain.validate()?;
        let dim = domain.dim();
        let TimeConfig { dt, t_final } = self.time;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("time.dt", format!("must be positive, got {dt}")));
        }
        if !(t_final >= dt) {
            return Err(Error::config("time.t_final", format!("must be at least dt = {dt}, got {t_final}")));
        }
        match &self.scheme {
            SchemeConfig::OtdZeta { zeta, .. } | SchemeConfig::DtoGn { zeta, .. } if !(0.0..=1.0).contains(zeta) => {
                return Err(Error::config("scheme.zeta", format!("must lie in [0, 1], got {zeta}")));
            }
            SchemeConfig::DtoGn { jitter, .. } if !(*jitter >= 0.0) => {
                return Err(Error::config("scheme.jitter", "must be non-negative"));
            }
            _ => {}
        }
        if let Some(inner) = self.scheme.inner() {
            inner.validate()?;
        }
        match (&self.problem, &self.scheme) {
            (ProblemConfig::Advection { velocity, acceleration, .. }, _) => {
                if velocity.len() != dim || !(acceleration.is_empty() || acceleration.len() == dim) {
                    return Err(Error::config("problem.velocity", format!("need {dim} components")));
                }
            }
            (ProblemConfig::GradientFlow { target, .. }, _) => target.validate(&domain)?,
            (ProblemConfig::Collapse { .. }, _) if !matches!(self.model.spec, ModelSpec::GaussianMixture { .. }) => {
                return Err(Error::config("model.kind", "the collapse problem needs a gaussian-mixture model"));
            }
            _ => {}
        }
        if matches!(self.scheme, SchemeConfig::DtoImex { .. })
            && !matches!(self.problem, ProblemConfig::Heat { .. } | ProblemConfig::Collapse { .. })
        {
            return Err(Error::config("scheme.kind", "dto-imex needs a problem with a Laplacian"));
        }
        if matches!(self.scheme, SchemeConfig::Ngd {}) && !matches!(self.problem, ProblemConfig::GradientFlow { .. }) {
            return Err(Error::config("scheme.kind", "ngd needs the gradient-flow problem"));
        }
        if let Some(field) = &self.initial.field {
            field.validate(&domain)?;
        }
        if !(self.solver.tau >= 0.0 && self.solver.tau < 1.0) {
            return Err(Error::config("solver.tau", "must lie in [0, 1)"));
        }
        if self.bounds.eps_param.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("bounds.eps_param", "entries must be positive"));
        }
        for (name, v) in [("bounds.c", self.bounds.c), ("bounds.c0", self.bounds.c0)] {
            if v.is_some_and(|v| !(v >= 0.0)) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        if self.bounds.lambda_star.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::config("bounds.lambda_star", "must be positive"));
        }
        let tol = self.diagnostics.duplicate_tol;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::config("diagnostics.duplicate_tol", "must lie in (0, 1)"));
        }
        if !(self.diagnostics.stationarity_tol > 0.0) {
            return Err(Error::config("diagnostics.stationarity_tol", "must be positive"));
        }
        if self.output.spectra_stride == 0 {
            return Err(Error::config("output.spectra_stride", "must be at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }

    pub fn mask(&self) -> MaskKind {
        self.model.mask.unwrap_or_else(|| self.problem.default_mask())
    }

    pub fn initial_field(&self) -> Field {
        self.initial.field.clone().unwrap_or_else(|| self.problem.default_initial())
    }

    /// Output directory: `dir` (or `fallback`) under the output root, which is
    /// `$SEQTRAIN_OUTPUT_ROOT` when set and the working directory otherwise.
    pub fn output_dir(&self, fallback: &str) -> PathBuf {
        let rel = self.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(fallback));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if rel.is_relative() => PathBuf::from(root).join(rel),
            _ => rel,
        }
    }
}
