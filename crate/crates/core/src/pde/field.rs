use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, PointSet};
use crate::error::{Error, Result};

/// One separable Dirichlet eigenfunction `prod_a sin(k_a pi (x_a - lo_a) / L_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineMode {
    pub amplitude: f64,
    /// one positive wavenumber per axis
    pub wavenumbers: Vec<u32>,
}

impl SineMode {
    /// Eigenvalue of `-Laplace` for this mode on `domain`.
    pub fn eigenvalue(&self, domain: &BoxDomain) -> f64 {
        self.wavenumbers
            .iter()
            .enumerate()
            .map(|(a, &k)| (k as f64 * PI / domain.length(a)).powi(2))
            .sum()
    }
}

/// Closed-form scalar fields used for initial conditions and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Field {
    #[default]
    Zero,
    /// Sum of Dirichlet eigenfunctions of the problem domain.
    SineSeries { modes: Vec<SineMode> },
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Value, gradient and Laplacian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldJet {
    pub value: f64,
    pub grad: [f64; 2],
    pub laplacian: f64,
}

/// Node samples of a field: values, `d x n` gradient and Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    pub values: DVector<f64>,
    pub grad_x: DMatrix<f64>,
    pub laplacian: DVector<f64>,
}

impl FieldSamples {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            values: DVector::zeros(n),
            grad_x: DMatrix::zeros(dim, n),
            laplacian: DVector::zeros(n),
        }
    }
}

impl Field {
    pub fn sine(amplitude: f64, wavenumber: u32) -> Self {
        Field::SineSeries {
            modes: vec![SineMode {
                amplitude,
                wavenumbers: vec![wavenumber],
            }],
        }
    }

    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        match self {
            Field::Zero => Ok(()),
            Field::SineSeries { modes } => {
                for m in modes {
                    if m.wavenumbers.len() != domain.dim() || m.wavenumbers.contains(&0) {
                        return Err(Error::config(
                            "field.modes",
                            "each mode needs one positive wavenumber per axis",
                        ));
                    }
                }
                Ok(())
            }
            Field::Gaussian { center, width, amplitude } => {
                if center.len() != domain.dim() {
                    return Err(Error::config("field.center", "dimension mismatch"));
                }
                if !(*width > 0.0) || !amplitude.is_finite() {
                    return Err(Error::config("field.width", "width must be positive"));
                }
                Ok(())
            }
        }
    }

    pub fn jet(&self, x: &[f64], domain: &BoxDomain) -> FieldJet {
        let d = x.len();
        let mut out = FieldJet {
            value: 0.0,
            grad: [0.0; 2],
            laplacian: 0.0,
        };
        match self {
            Field::Zero => {}
            Field::SineSeries { modes } => {
                for m in modes {
                    let mut s = [1.0; 2];
                    let mut c = [0.0; 2];
                    let mut k = [0.0; 2];
                    for a in 0..d {
                        k[a] = m.wavenumbers[a] as f64 * PI / domain.length(a);
                        let arg = k[a] * (x[a] - domain.lo[a]);
                        s[a] = arg.sin();
                        c[a] = arg.cos();
                    }
                    let prod: f64 = s[..d].iter().product();
                    out.value += m.amplitude * prod;
                    for a in 0..d {
                        let others: f64 = (0..d).filter(|&b| b != a).map(|b| s[b]).product();
                        out.grad[a] += m.amplitude * k[a] * c[a] * others;
                    }
                    out.laplacian -= m.amplitude * prod * m.eigenvalue(domain);
                }
            }
            Field::Gaussian { center, width, amplitude } => {
                let w2 = width * width;
                let r2: f64 = x.iter().zip(center).map(|(xi, ci)| (xi - ci).powi(2)).sum::<f64>() / w2;
                let e = amplitude * (-0.5 * r2).exp();
                out.value = e;
                for a in 0..d {
                    out.grad[a] = -e * (x[a] - center[a]) / w2;
                }
                out.laplacian = e * (r2 - d as f64) / w2;
            }
        }
        out
    }

    pub fn sample(&self, points: &PointSet, domain: &BoxDomain) -> FieldSamples {
        let (d, n) = (points.dim(), points.len());
        let mut s = FieldSamples::zeros(d, n);
        for (j, x) in points.iter().enumerate() {
            let jet = self.jet(x, domain);
            s.values[j] = jet.value;
            for a in 0..d {
                s.grad_x[(a, j)] = jet.grad[a];
            }
            s.laplacian[j] = jet.laplacian;
        }
        s
    }

    pub fn values(&self, points: &PointSet, domain: &BoxDomain) -> DVector<f64> {
        DVector::from_iterator(points.len(), points.iter().map(|x| self.jet(x, domain).value))
    }
}
