use nalgebra::{DMatrix, DVector};

use super::QuadratureRule;
use crate::error::{ensure_finite, Error, Result};
use crate::models::{grad_theta, Parametrization};

/// `P(theta) = <grad_theta u, grad_theta u>_M` with its singular spectrum.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    /// descending
    pub singular_values: DVector<f64>,
    /// relative truncation threshold used for rank decisions
    pub tau: f64,
}

impl GramMatrix {
    pub fn new(entries: DMatrix<f64>, tau: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::config("gram", "matrix is not square"));
        }
        ensure_finite(entries.as_slice(), "gram matrix")?;
        let singular_values = sorted_singular_values(&entries)?;
        Ok(Self {
            entries,
            singular_values,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of singular values `>= tau * sigma_max`.
    pub fn effective_rank(&self) -> usize {
        effective_rank(self.singular_values.as_slice(), self.tau)
    }

    /// `sigma_min / sigma_max`, zero for the zero matrix.
    pub fn condition_ratio(&self) -> f64 {
        ratio(self.singular_values.as_slice())
    }
}

pub(crate) fn effective_rank(descending: &[f64], tau: f64) -> usize {
    let max = descending.first().copied().unwrap_or(0.0);
    descending.iter().filter(|&&s| s > 0.0 && s >= tau * max).count()
}

pub(crate) fn ratio(descending: &[f64]) -> f64 {
    match (descending.first(), descending.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        _ => 0.0,
    }
}

/// `m = u diag(s) v_t` with `s` descending.
struct ThinSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v_t: DMatrix<f64>,
}

impl ThinSvd {
    #[cfg(test)]
    fn recompose(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * &self.v_t
    }
}

fn svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let dec = a
        .thin_svd()
        .map_err(|e| Error::LinearAlgebra(format!("SVD did not converge: {e:?}")))?;
    let (u, v, s) = (dec.U(), dec.V(), dec.S().column_vector());
    Ok(ThinSvd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: DVector::from_fn(s.nrows(), |i, _| s[i]),
        v_t: DMatrix::from_fn(v.ncols(), v.nrows(), |i, j| v[(j, i)]),
    })
}

fn sorted_singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(svd(m)?.s)
}

/// Gram matrix from a `p x n` gradient sample matrix.
pub fn gram_from_gradients(d_theta: &DMatrix<f64>, rule: &QuadratureRule, tau: f64) -> Result<GramMatrix> {
    if d_theta.ncols() != rule.len() {
        return Err(Error::config("gradients", "column count differs from quadrature node count"));
    }
    ensure_finite(d_theta.as_slice(), "parameter gradient")?;
    let scaled = weighted_rows(d_theta, rule);
    let mut entries = &scaled * scaled.transpose();
    // exact symmetry
    let p = entries.nrows();
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (entries[(i, j)] + entries[(j, i)]);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    GramMatrix::new(entries, tau)
}

/// `F_i = <d_i u, f>_M` from a `p x n` gradient sample matrix.
pub fn moment_from_gradients(
    d_theta: &DMatrix<f64>,
    rhs_vals: &DVector<f64>,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    if d_theta.ncols() != rule.len() || rhs_vals.len() != rule.len() {
        return Err(Error::config("moment", "sample count differs from quadrature node count"));
    }
    ensure_finite(rhs_vals.as_slice(), "right-hand side")?;
    Ok(d_theta * rhs_vals.component_mul(rule.weights()))
}

fn weighted_rows(d_theta: &DMatrix<f64>, rule: &QuadratureRule) -> DMatrix<f64> {
    let mut scaled = d_theta.clone();
    for (mut col, sw) in scaled.column_iter_mut().zip(rule.sqrt_weights().iter()) {
        col *= *sw;
    }
    scaled
}

pub fn assemble_gram(model: &dyn Parametrization, theta: &[f64], rule: &QuadratureRule, tau: f64) -> Result<GramMatrix> {
    gram_from_gradients(&grad_theta(model, theta, rule.nodes())?, rule, tau)
}

pub fn assemble_moment(
    model: &dyn Parametrization,
    theta: &[f64],
    rhs_vals: &DVector<f64>,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    moment_from_gradients(&grad_theta(model, theta, rule.nodes())?, rhs_vals, rule)
}

#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub x: DVector<f64>,
    pub rank: usize,
}

/// Minimal-norm solution of `P x = b`, discarding singular values below
/// `tau * sigma_max`.
pub fn solve_min_norm(p: &GramMatrix, b: &DVector<f64>, tau: f64) -> Result<MinNormSolution> {
    if b.len() != p.dim() {
        return Err(Error::config("rhs", "length differs from matrix size"));
    }
    ensure_finite(b.as_slice(), "linear system right-hand side")?;
    let (x, rank, _) = pseudo_solve(&p.entries, b, tau)?;
    Ok(MinNormSolution { x, rank })
}

/// Truncated SVD solve; keeps singular values `>= cut * s_max`. Returns the
/// solution, the rank and the descending spectrum.
fn pseudo_solve(a: &DMatrix<f64>, b: &DVector<f64>, cut: f64) -> Result<(DVector<f64>, usize, Vec<f64>)> {
    let dec = svd(a)?;
    let (u, v_t, s) = (&dec.u, &dec.v_t, &dec.s);
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    for i in 0..s.len() {
        if s[i] > 0.0 && s[i] >= cut * s_max {
            rank += 1;
            let coef = u.column(i).dot(b) / s[i];
            x.axpy(coef, &v_t.row(i).transpose(), 1.0);
        }
    }
    let mut spectrum: Vec<f64> = s.iter().copied().collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    Ok((x, rank, spectrum))
}

#[derive(Debug, Clone)]
pub struct LeastSquaresSolution {
    pub x: DVector<f64>,
    /// number of retained singular values
    pub rank: usize,
    /// descending singular values of the weighted sample matrix; squares are
    /// the singular values of the Gram matrix
    pub singular_values: Vec<f64>,
    /// `r - J x`
    pub residual: DVector<f64>,
    pub residual_norm: f64,
}

impl LeastSquaresSolution {
    /// Spectrum of the associated Gram matrix `J^T J`.
    pub fn gram_spectrum(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s * s).collect()
    }
}

/// Minimal-norm solution of `min |J x - r|`.
///
/// `tau` is relative to the spectrum of `J^T J`, so singular values of `J`
/// are cut at `sqrt(tau) * s_max`; the rank decision therefore matches
/// [`solve_min_norm`] on the Gram matrix.
pub fn solve_least_squares(j: &DMatrix<f64>, r: &DVector<f64>, tau: f64) -> Result<LeastSquaresSolution> {
    if r.len() != j.nrows() {
        return Err(Error::config("rhs", "length differs from sample count"));
    }
    ensure_finite(r.as_slice(), "least-squares target")?;
    ensure_finite(j.as_slice(), "least-squares matrix")?;
    if tau < 0.0 {
        return Err(Error::config("tau", "must be non-negative"));
    }
    let (x, rank, singular_values) = pseudo_solve(j, r, tau.sqrt())?;
    let residual = r - j * &x;
    let residual_norm = residual.norm();
    Ok(LeastSquaresSolution {
        x,
        rank,
        singular_values,
        residual,
        residual_norm,
    })
}

/// `sqrt(w_q)`-scaled sample matrix (`n x p`) from a `p x n` gradient block.
pub fn weighted_jacobian(d_theta: &DMatrix<f64>, rule: &QuadratureRule) -> DMatrix<f64> {
    weighted_rows(d_theta, rule).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxDomain;
    use crate::models::GaussianMixture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_system_returns_rhs() {
        let p = GramMatrix::new(DMatrix::identity(5, 5), 1e-10).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let sol = solve_min_norm(&p, &b, 1e-10).unwrap();
        assert!((sol.x - b).amax() < 1e-14);
        assert_eq!(sol.rank, 5);
    }

    #[test]
    fn gram_matrix_with_clustered_spectrum_factors_accurately() {
        // bidiagonal QR with an early convergence test recomposes this 6 x 6
        // Gram matrix with error ~1e-3
        let bits: [u64; 36] = [
            0x40149290c3ea9e39, 0x3fec1edbbb219877, 0xbf313caf55fe260e,
            0xbf9f0a3f32d5aaef, 0xbfaf5e81d0619dbe, 0xbee48e6af14dc9bd,
            0x3fec1edbbb219877, 0x40196c6be244bbc4, 0x3ff9969bcdb1a948,
            0xbfb0b7b63ed07ab8, 0xbe084018fb7042f7, 0x3fc34a03a7bf8ce9,
            0xbf313caf55fe260e, 0x3ff9969bcdb1a948, 0x401026e59a22b989,
            0x3ee3e3b07f8b4037, 0x3fc1831b278a59aa, 0x3fbadc464c6bf42b,
            0xbf9f0a3f32d5aaef, 0xbfb0b7b63ed07ab8, 0x3ee3e3b07f8b4037,
            0x3fc66c5158c76eb0, 0x3f703267ec568dc7, 0x3e96d18a568b5a0a,
            0xbfaf5e81d0619dbe, 0xbe084018fb7042f7, 0x3fc1831b278a59aa,
            0x3f703267ec568dc7, 0x3fc6affa0e206451, 0x3f85b7a56bab974b,
            0xbee48e6af14dc9bd, 0x3fc34a03a7bf8ce9, 0x3fbadc464c6bf42b,
            0x3e96d18a568b5a0a, 0x3f85b7a56bab974b, 0x3fc5790473c0fc76,
        ];
        let m = DMatrix::from_iterator(6, 6, bits.iter().map(|&b| f64::from_bits(b)));
        let dec = svd(&m).unwrap();
        assert!((dec.recompose() - &m).amax() < 1e-12);
        let p = GramMatrix::new(m.clone(), 1e-10).unwrap();
        let b = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0, -1.0, 0.5]);
        let oracle = m.lu().solve(&b).unwrap();
        let sol = solve_min_norm(&p, &b, 1e-10).unwrap();
        assert!((sol.x - &oracle).amax() < 1e-10 * oracle.amax());
    }

    #[test]
    fn ill_conditioned_tall_jacobian_factors_accurately() {
        // 48 x 8 weighted Jacobian, condition number ~1.6e6, on which a plain
        // Golub-Kahan iteration recomposes with relative error ~4e-10
        let text = include_str!("fixtures/tall_jacobian.txt");
        let mut lines = text.lines();
        let dims: Vec<usize> = lines.next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
        let values: Vec<f64> = lines
            .next()
            .unwrap()
            .split(' ')
            .map(|h| f64::from_bits(u64::from_str_radix(h, 16).unwrap()))
            .collect();
        let j = DMatrix::from_vec(dims[0], dims[1], values);
        let dec = svd(&j).unwrap();
        assert!((dec.recompose() - &j).amax() < 1e-13 * j.amax());
        assert!(dec.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let r = DVector::from_fn(dims[0], |i, _| (i as f64 * 0.37).sin());
        let qr = j.clone().qr();
        let oracle = qr.r().solve_upper_triangular(&(qr.q().transpose() * &r)).unwrap();
        let sol = solve_least_squares(&j, &r, 0.0).unwrap();
        assert!((sol.x - &oracle).amax() < 1e-6 * oracle.amax());
    }

    #[test]
    fn full_rank_system_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 10, 10);
        let p = GramMatrix::new(&a * a.transpose() + DMatrix::identity(10, 10), 0.0).unwrap();
        let b = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let sol = solve_min_norm(&p, &b, 0.0).unwrap();
        let oracle = p.entries.clone().lu().solve(&b).unwrap();
        assert!((&p.entries * &sol.x - &b).norm() / b.norm() < 1e-10);
        assert!((sol.x - oracle).amax() < 1e-10);
    }

    #[test]
    fn duplicated_kernels_give_symmetric_min_norm_solution() {
        let dom = BoxDomain::unit(1);
        let rule = QuadratureRule::gauss_legendre(&dom, 64).unwrap();
        let model = GaussianMixture::new(2, 1, 0.15, false).unwrap();
        let theta = model.pack(&[vec![0.5], vec![0.5]], &[0.7, 0.7], None).unwrap();
        let gram = assemble_gram(&model, &theta, &rule, 1e-10).unwrap();
        assert!(gram.condition_ratio() < 1e-12);
        assert_eq!(gram.effective_rank(), 2);
        let f = DVector::from_iterator(rule.len(), rule.nodes().iter().map(|x| (3.0 * x[0]).sin()));
        let b = assemble_moment(&model, &theta, &f, &rule).unwrap();
        let eta = solve_min_norm(&gram, &b, 1e-10).unwrap().x;
        assert!((eta[0] - eta[1]).abs() < 1e-10 * (1.0 + eta.amax()));
        assert!((eta[2] - eta[3]).abs() < 1e-10 * (1.0 + eta.amax()));
        let j = weighted_jacobian(&grad_theta(&model, &theta, rule.nodes()).unwrap(), &rule);
        let ls = solve_least_squares(&j, &rule.weighted(&f).unwrap(), 1e-10).unwrap();
        assert_eq!(ls.rank, 2);
        assert!((ls.x[0] - ls.x[1]).abs() < 1e-10 * (1.0 + ls.x.amax()));
        assert!((ls.x[2] - ls.x[3]).abs() < 1e-10 * (1.0 + ls.x.amax()));
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let j = random_matrix(&mut rng, 40, 8);
            let r = DVector::from_fn(40, |_, _| rng.gen_range(-1.0..1.0));
            let ls = solve_least_squares(&j, &r, 1e-10).unwrap();
            let gram = GramMatrix::new(j.transpose() * &j, 1e-10).unwrap();
            let f = j.transpose() * &r;
            let ne = solve_min_norm(&gram, &f, 1e-10).unwrap();
            assert!((&ls.x - &ne.x).amax() < 1e-8);
            assert!((&gram.entries * &ls.x - &f).norm() <= 1e-10 * f.norm());
        }
    }

    #[test]
    fn target_in_range_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j = random_matrix(&mut rng, 30, 5);
        let c = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let ls = solve_least_squares(&j, &(&j * &c), 1e-12).unwrap();
        assert!(ls.residual_norm < 1e-12);
        assert!((ls.x - c).amax() < 1e-10);
    }

    #[test]
    fn zero_rhs_gives_zero_moment() {
        let rule = QuadratureRule::gauss_legendre(&BoxDomain::unit(1), 16).unwrap();
        let model = GaussianMixture::new(3, 1, 0.2, true).unwrap();
        let theta = model
            .pack(&[vec![0.2], vec![0.5], vec![0.8]], &[1.0, -1.0, 0.5], Some(&[0.2, 0.2, 0.3]))
            .unwrap();
        let m = assemble_moment(&model, &theta, &DVector::zeros(16), &rule).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }
}
