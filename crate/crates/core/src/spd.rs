//! Geometry of symmetric and symmetric positive definite (SPD) matrices.
//!
//! Everything here works in `f64`. Eigendecompositions are returned with
//! eigenvalues in descending order and a fixed eigenvector sign (the entry of
//! largest magnitude in each column is positive), so identical input bits give
//! identical output bits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::trial::MultichannelTrial;

const EIG_MAX_ITER: usize = 10_000;
const KARCHER_TOL: f64 = 1e-9;
const KARCHER_MAX_ITER: usize = 200;

/// A real symmetric matrix. Symmetry is enforced bit-exactly on
/// construction by averaging with the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)]) * 0.5)
}

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { m: symmetrize(&m) })
    }

    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} values for a {n}x{n} matrix, got {}",
                n * n,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { m: &self.m * factor }
    }

    /// `Wᵀ·S·W` for a `dim × k` matrix `W`.
    pub fn congruence(&self, w: &DMatrix<f64>) -> Result<Self> {
        if w.nrows() != self.dim() {
            return Err(Error::invalid(format!(
                "congruence by a {}x{} matrix on a {}x{} symmetric matrix",
                w.nrows(),
                w.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(Self {
            m: symmetrize(&(w.transpose() * &self.m * w)),
        })
    }
}

/// Eigendecomposition `S = U·diag(λ)·Uᵀ` with `λ` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigPair {
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
}

impl EigPair {
    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigvals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigvals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `U·diag(values)·Uᵀ`, symmetrized.
    pub fn compose(&self, values: &DVector<f64>) -> SymmetricMatrix {
        let mut scaled = self.eigvecs.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= values[j];
        }
        SymmetricMatrix {
            m: symmetrize(&(scaled * self.eigvecs.transpose())),
        }
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.compose(&self.eigvals)
    }

    /// Applies a spectral function, checking its domain first.
    pub fn map(&self, f: SpectralFn) -> Result<SymmetricMatrix> {
        if f.requires_positive() {
            let min = self.min_eigenvalue();
            if min <= 0.0 || min.is_nan() {
                return Err(Error::Domain {
                    op: f.name(),
                    min_eigenvalue: min,
                });
            }
        }
        Ok(self.compose(&self.eigvals.map(|l| f.value(l))))
    }
}

/// Symmetric eigendecomposition with descending eigenvalues and the
/// largest-magnitude component of every eigenvector made positive.
pub fn sym_eig(s: &SymmetricMatrix) -> Result<EigPair> {
    let n = s.dim();
    if s.m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "eigendecomposition of a {n}x{n} matrix with non-finite entries"
        )));
    }
    if n == 0 {
        return Ok(EigPair {
            eigvecs: DMatrix::zeros(0, 0),
            eigvals: DVector::zeros(0),
        });
    }
    let eig = SymmetricEigen::try_new(s.m.clone(), f64::EPSILON, EIG_MAX_ITER).ok_or_else(|| {
        Error::numeric(format!(
            "eigendecomposition of a {n}x{n} matrix did not converge in {EIG_MAX_ITER} iterations"
        ))
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let eigvals = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        eigvecs.set_column(dst, &(col * sign));
    }
    Ok(EigPair { eigvecs, eigvals })
}

/// Scalar functions lifted to symmetric matrices through the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralFn {
    Log,
    Exp,
    /// `max(λ, ε)`, the rectifier of a ReEig layer.
    ClampBelow(f64),
    InvSqrt,
    Sqrt,
}

impl SpectralFn {
    pub fn value(self, l: f64) -> f64 {
        match self {
            SpectralFn::Log => l.ln(),
            SpectralFn::Exp => l.exp(),
            SpectralFn::ClampBelow(eps) => l.max(eps),
            SpectralFn::InvSqrt => 1.0 / l.sqrt(),
            SpectralFn::Sqrt => l.sqrt(),
        }
    }

    pub fn derivative(self, l: f64) -> f64 {
        match self {
            SpectralFn::Log => 1.0 / l,
            SpectralFn::Exp => l.exp(),
            SpectralFn::ClampBelow(eps) => {
                if l > eps {
                    1.0
                } else {
                    0.0
                }
            }
            SpectralFn::InvSqrt => -0.5 / (l * l.sqrt()),
            SpectralFn::Sqrt => 0.5 / l.sqrt(),
        }
    }

    pub fn requires_positive(self) -> bool {
        matches!(self, SpectralFn::Log | SpectralFn::InvSqrt | SpectralFn::Sqrt)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectralFn::Log => "log",
            SpectralFn::Exp => "exp",
            SpectralFn::ClampBelow(_) => "clamp_below",
            SpectralFn::InvSqrt => "inv_sqrt",
            SpectralFn::Sqrt => "sqrt",
        }
    }
}

pub fn spd_map(s: &SymmetricMatrix, f: SpectralFn) -> Result<SymmetricMatrix> {
    sym_eig(s)?.map(f)
}

/// Sample covariance `T·Tᵀ / (N_t − 1)`, without mean removal.
pub fn scm(trial: &MultichannelTrial) -> Result<SymmetricMatrix> {
    let rows: Vec<&[f64]> = trial.rows().collect();
    scm_rows(&rows, trial.n_samples())
}

pub(crate) fn scm_rows(rows: &[&[f64]], n_samples: usize) -> Result<SymmetricMatrix> {
    if n_samples < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 samples, got {n_samples}"
        )));
    }
    let n = rows.len();
    let denom = (n_samples - 1) as f64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(rows[i], rows[j]) / denom;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(SymmetricMatrix { m })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Upper-triangle column traversal `[S₁₁, √2·S₁₂, S₂₂, √2·S₁₃, …]`, an
/// isometry between the Frobenius and Euclidean norms.
pub fn vectorize(s: &SymmetricMatrix) -> Vec<f64> {
    let n = s.dim();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let v = s.m[(i, j)];
            out.push(if i == j { v } else { std::f64::consts::SQRT_2 * v });
        }
    }
    out
}

/// Adjoint of [`vectorize`]: maps a gradient on the vector to the symmetric
/// gradient on the matrix.
pub fn vectorize_adjoint(grad: &[f64], n: usize) -> SymmetricMatrix {
    debug_assert_eq!(grad.len(), n * (n + 1) / 2);
    let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = grad[k];
            } else {
                m[(i, j)] = half_sqrt2 * grad[k];
                m[(j, i)] = half_sqrt2 * grad[k];
            }
            k += 1;
        }
    }
    SymmetricMatrix { m }
}

pub fn concat_block_diag(blocks: &[SymmetricMatrix]) -> Result<SymmetricMatrix> {
    if blocks.is_empty() {
        return Err(Error::invalid("block-diagonal concatenation of zero blocks"));
    }
    let n: usize = blocks.iter().map(SymmetricMatrix::dim).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let d = b.dim();
        m.view_mut((offset, offset), (d, d)).copy_from(&b.m);
        offset += d;
    }
    Ok(SymmetricMatrix { m })
}

/// Covariance of the filter-major channel stack of several filtered copies
/// of a trial. Diagonal blocks are the per-filter covariances, off-diagonal
/// blocks the interband covariances.
pub fn stacked_cov(filtered: &[MultichannelTrial]) -> Result<SymmetricMatrix> {
    let first = filtered
        .first()
        .ok_or_else(|| Error::invalid("stacked covariance of zero trials"))?;
    let n_samples = first.n_samples();
    if let Some(bad) = filtered.iter().find(|t| t.n_samples() != n_samples) {
        return Err(Error::invalid(format!(
            "stacked covariance inputs differ in length ({} vs {n_samples} samples)",
            bad.n_samples()
        )));
    }
    let rows: Vec<&[f64]> = filtered.iter().flat_map(|t| t.rows()).collect();
    scm_rows(&rows, n_samples)
}

/// Zeroes every off-diagonal block of `c` for the given block partition.
pub fn remove_interband(c: &SymmetricMatrix, block_sizes: &[usize]) -> Result<SymmetricMatrix> {
    let total: usize = block_sizes.iter().sum();
    if total != c.dim() {
        return Err(Error::invalid(format!(
            "block sizes sum to {total} but matrix is {}x{}",
            c.dim(),
            c.dim()
        )));
    }
    let block_of: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = c.dim();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if block_of[i] == block_of[j] {
            c.m[(i, j)]
        } else {
            0.0
        }
    });
    Ok(SymmetricMatrix { m })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiemannianMetric {
    LogEuclidean,
    AffineInvariant,
}

impl std::str::FromStr for RiemannianMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lem" | "log-euclidean" | "logeuclidean" => Ok(RiemannianMetric::LogEuclidean),
            "airm" | "affine-invariant" | "affineinvariant" => Ok(RiemannianMetric::AffineInvariant),
            other => Err(Error::invalid(format!("unknown metric `{other}` (expected lem or airm)"))),
        }
    }
}

impl std::fmt::Display for RiemannianMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiemannianMetric::LogEuclidean => "lem",
            RiemannianMetric::AffineInvariant => "airm",
        })
    }
}

/// A symmetric positive definite matrix together with its
/// eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    base: SymmetricMatrix,
    eig: EigPair,
}

impl SpdMatrix {
    /// Fails with a domain error unless every eigenvalue exceeds `1e-12`
    /// times the largest one.
    pub fn new(base: SymmetricMatrix) -> Result<Self> {
        let eig = sym_eig(&base)?;
        let min = eig.min_eigenvalue();
        let max = eig.max_eigenvalue();
        if base.dim() == 0 || !(min > 0.0) || min < 1e-12 * max {
            return Err(Error::Domain {
                op: "spd",
                min_eigenvalue: min,
            });
        }
        Ok(Self { base, eig })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymmetricMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_symmetric(&self) -> &SymmetricMatrix {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.base.m
    }

    pub fn eig(&self) -> &EigPair {
        &self.eig
    }

    /// Smallest eigenvalue, a certified lower bound on the spectrum.
    pub fn eig_floor(&self) -> f64 {
        self.eig.min_eigenvalue()
    }

    pub fn map(&self, f: SpectralFn) -> SymmetricMatrix {
        self.eig.compose(&self.eig.eigvals.map(|l| f.value(l)))
    }

    pub fn log(&self) -> SymmetricMatrix {
        self.map(SpectralFn::Log)
    }

    pub fn sqrt(&self) -> SymmetricMatrix {
        self.map(SpectralFn::Sqrt)
    }

    pub fn inv_sqrt(&self) -> SymmetricMatrix {
        self.map(SpectralFn::InvSqrt)
    }
}

fn check_same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "distance between {}x{} and {}x{} matrices",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Orders a pair by bit pattern so that pairwise computations do not depend
/// on argument order.
fn canonical_pair<'a>(a: &'a SpdMatrix, b: &'a SpdMatrix) -> (&'a SpdMatrix, &'a SpdMatrix) {
    let key = |s: &SpdMatrix| s.matrix().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn distance(a: &SpdMatrix, b: &SpdMatrix, metric: RiemannianMetric) -> Result<f64> {
    check_same_dim(a, b)?;
    match metric {
        RiemannianMetric::LogEuclidean => Ok((a.log().m - b.log().m).norm()),
        RiemannianMetric::AffineInvariant => {
            let (a, b) = canonical_pair(a, b);
            let whitened = b.as_symmetric().congruence(a.inv_sqrt().matrix())?;
            let eig = sym_eig(&whitened)?;
            if eig.min_eigenvalue() <= 0.0 {
                return Err(Error::Domain {
                    op: "airm distance",
                    min_eigenvalue: eig.min_eigenvalue(),
                });
            }
            Ok(eig.eigvals.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
        }
    }
}

fn log_euclidean_mean(set: &[SpdMatrix]) -> Result<SpdMatrix> {
    let n = set[0].dim();
    let mut acc = DMatrix::zeros(n, n);
    for s in set {
        acc += s.log().m;
    }
    acc /= set.len() as f64;
    SpdMatrix::new(spd_map(&SymmetricMatrix::new(acc)?, SpectralFn::Exp)?)
}

/// Fréchet mean. Closed form under the log-Euclidean metric; Karcher
/// fixed-point iteration (unit step) under the affine-invariant metric,
/// started from the log-Euclidean mean.
pub fn frechet_mean(set: &[SpdMatrix], metric: RiemannianMetric) -> Result<SpdMatrix> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid("Fréchet mean of an empty set"))?;
    if let Some(bad) = set.iter().find(|s| s.dim() != first.dim()) {
        return Err(Error::invalid(format!(
            "Fréchet mean over mixed dimensions ({} vs {})",
            bad.dim(),
            first.dim()
        )));
    }
    if set.len() == 1 {
        return Ok(first.clone());
    }
    let mut mean = log_euclidean_mean(set)?;
    if metric == RiemannianMetric::LogEuclidean {
        return Ok(mean);
    }
    let n = first.dim();
    let mut residual = f64::INFINITY;
    for _ in 0..KARCHER_MAX_ITER {
        let half = mean.sqrt();
        let inv_half = mean.inv_sqrt();
        let mut tangent = DMatrix::zeros(n, n);
        for s in set {
            let w = s.as_symmetric().congruence(inv_half.matrix())?;
            tangent += spd_map(&w, SpectralFn::Log)?.m;
        }
        tangent /= set.len() as f64;
        residual = tangent.norm();
        if residual < KARCHER_TOL {
            return Ok(mean);
        }
        let step = spd_map(&SymmetricMatrix::new(tangent)?, SpectralFn::Exp)?;
        mean = SpdMatrix::new(step.congruence(half.matrix())?)?;
    }
    Err(Error::numeric(format!(
        "Karcher mean did not converge in {KARCHER_MAX_ITER} iterations (residual {residual:e})"
    )))
}

/// `vectorize(log S)`: the log-Euclidean tangent coordinates of `S`.
pub fn tangent_vectorize(s: &SpdMatrix) -> Vec<f64> {
    vectorize(&s.log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{E, SQRT_2};

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        SpdMatrix::new(SymmetricMatrix::new(m).unwrap()).unwrap()
    }

    fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn construction_symmetrizes_exactly() {
        let s = SymmetricMatrix::from_row_slice(2, &[1.0, 0.1, 0.3, 2.0]).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert!(SymmetricMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(e.eigvals.as_slice(), &[1.0, 1.0, 1.0]);
        assert!(rel_fro(e.reconstruct().matrix(), &DMatrix::identity(3, 3)) < 1e-15);

        let e = sym_eig(&SymmetricMatrix::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_eq!(e.eigvals.as_slice(), &[4.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((e.eigvecs.abs() - expected).norm() < 1e-15);
    }

    #[test]
    fn eig_random_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 6, 12] {
            let s = random_sym(n, &mut rng);
            let e = sym_eig(&s).unwrap();
            assert!(rel_fro(e.reconstruct().matrix(), s.matrix()) < 1e-10);
            let gram = &e.eigvecs * e.eigvecs.transpose();
            assert!((gram - DMatrix::identity(n, n)).norm() < 1e-10);
            assert!(e.eigvals.as_slice().windows(2).all(|w| w[0] >= w[1]));
            for col in e.eigvecs.column_iter() {
                let pivot = col.iamax();
                assert!(col[pivot] > 0.0);
            }
            assert_eq!(sym_eig(&s).unwrap(), e);
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let s = SymmetricMatrix::from_diagonal(&[1.0, f64::NAN]);
        let err = sym_eig(&s).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("2x2")));
    }

    #[test]
    fn spectral_maps() {
        let z = spd_map(&SymmetricMatrix::identity(3), SpectralFn::Log).unwrap();
        assert!(z.frobenius_norm() < 1e-15);

        let c = spd_map(&SymmetricMatrix::from_diagonal(&[1.0, 1e-5]), SpectralFn::ClampBelow(5e-4)).unwrap();
        assert!(rel_fro(c.matrix(), SymmetricMatrix::from_diagonal(&[1.0, 5e-4]).matrix()) < 1e-15);

        let l = spd_map(&SymmetricMatrix::from_diagonal(&[E, E * E]), SpectralFn::Log).unwrap();
        assert!((l.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((l.get(1, 1) - 2.0).abs() < 1e-14);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn log_domain_error_reports_min_eigenvalue() {
        let s = SymmetricMatrix::from_diagonal(&[2.0, -0.5]);
        match spd_map(&s, SpectralFn::Log) {
            Err(Error::Domain { min_eigenvalue, .. }) => assert_eq!(min_eigenvalue, -0.5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(spd_map(&s, SpectralFn::InvSqrt).is_err());
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_spd(5, &mut rng);
            let back = spd_map(&s.log(), SpectralFn::Exp).unwrap();
            assert!(rel_fro(back.matrix(), s.matrix()) < 1e-9);
        }
    }

    #[test]
    fn scm_examples() {
        let t = MultichannelTrial::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.0]], 100.0).unwrap();
        let c = scm(&t).unwrap();
        assert_eq!(c.matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 4.0]));

        let t = MultichannelTrial::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0; 3]], 100.0).unwrap();
        let c = scm(&t).unwrap();
        assert_eq!(c.get(1, 0), 0.0);
        assert_eq!(c.get(1, 1), 0.0);

        let short = MultichannelTrial::from_rows(&[vec![1.0]], 100.0).unwrap();
        assert!(matches!(scm(&short), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn scm_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let t = MultichannelTrial::from_rows(&rows, 250.0).unwrap();
        let c = scm(&t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..500 {
                    acc += rows[i][k] * rows[j][k];
                }
                assert!((c.get(i, j) - acc / 499.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectorize_examples() {
        let s = SymmetricMatrix::from_row_slice(2, &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(vectorize(&s), vec![1.0, 2.0 * SQRT_2, 3.0]);
        assert_eq!(vectorize(&SymmetricMatrix::identity(3)), vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn vectorize_adjoint_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sym(4, &mut rng);
        let g: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = dot(&vectorize(&s), &g);
        let rhs = s.matrix().dot(vectorize_adjoint(&g, 4).matrix());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn block_diag_examples() {
        let a = SymmetricMatrix::from_diagonal(&[1.0, 2.0]);
        let b = SymmetricMatrix::from_diagonal(&[3.0]);
        let c = concat_block_diag(&[a.clone(), b]).unwrap();
        assert_eq!(c, SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0]));
        assert_eq!(concat_block_diag(std::slice::from_ref(&a)).unwrap(), a);
        assert!(concat_block_diag(&[]).is_err());
    }

    #[test]
    fn block_diag_eigenvalue_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_spd(3, &mut rng);
        let b = random_spd(2, &mut rng);
        let c = concat_block_diag(&[a.as_symmetric().clone(), b.as_symmetric().clone()]).unwrap();
        let mut union: Vec<f64> = a.eig().eigvals.iter().chain(b.eig().eigvals.iter()).copied().collect();
        union.sort_by(|x, y| y.total_cmp(x));
        let whole = sym_eig(&c).unwrap();
        for (x, y) in whole.eigvals.iter().zip(&union) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn stacked_cov_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mk = |rng: &mut ChaCha8Rng| {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..200).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            MultichannelTrial::from_rows(&rows, 250.0).unwrap()
        };
        let t1 = mk(&mut rng);
        let t2 = mk(&mut rng);
        let c = stacked_cov(&[t1.clone(), t2.clone()]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let cross: f64 = (0..200).map(|k| t1.row(i)[k] * t2.row(j)[k]).sum::<f64>() / 199.0;
                assert!((c.get(i, 3 + j) - cross).abs() < 1e-12);
            }
        }
        let rm = remove_interband(&c, &[3, 3]).unwrap();
        let bd = concat_block_diag(&[scm(&t1).unwrap(), scm(&t2).unwrap()]).unwrap();
        assert_eq!(rm, bd);

        let dup = stacked_cov(&[t1.clone(), t1.clone()]).unwrap();
        let single = scm(&t1).unwrap();
        for (bi, bj) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(dup.get(bi + i, bj + j), single.get(i, j));
                }
            }
        }

        let short = MultichannelTrial::from_rows(&vec![vec![0.0; 10]; 3], 250.0).unwrap();
        assert!(stacked_cov(&[t1, short]).is_err());
    }

    #[test]
    fn remove_interband_examples() {
        let ones = SymmetricMatrix::new(DMatrix::from_element(4, 4, 1.0)).unwrap();
        let r = remove_interband(&ones, &[2, 2]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.get(i, j), if (i < 2) == (j < 2) { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(remove_interband(&r, &[2, 2]).unwrap(), r);
        assert!(remove_interband(&ones, &[2, 1]).is_err());
    }

    #[test]
    fn distance_examples() {
        let i2 = SpdMatrix::from_diagonal(&[1.0, 1.0]).unwrap();
        let e2 = SpdMatrix::from_diagonal(&[E * E, E * E]).unwrap();
        for metric in [RiemannianMetric::LogEuclidean, RiemannianMetric::AffineInvariant] {
            assert!((distance(&i2, &e2, metric).unwrap() - 2.0 * SQRT_2).abs() < 1e-12);
            assert_eq!(distance(&e2, &e2, metric).unwrap(), 0.0);
        }
        let i3 = SpdMatrix::from_diagonal(&[1.0; 3]).unwrap();
        assert!(distance(&i2, &i3, RiemannianMetric::LogEuclidean).is_err());
    }

    #[test]
    fn airm_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let a = random_spd(4, &mut rng);
            let b = random_spd(4, &mut rng);
            let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(4, 4);
            let mt = m.transpose();
            let ca = SpdMatrix::new(a.as_symmetric().congruence(&mt).unwrap()).unwrap();
            let cb = SpdMatrix::new(b.as_symmetric().congruence(&mt).unwrap()).unwrap();
            let d0 = distance(&a, &b, RiemannianMetric::AffineInvariant).unwrap();
            let d1 = distance(&ca, &cb, RiemannianMetric::AffineInvariant).unwrap();
            assert!((d0 - d1).abs() / d0 < 1e-8, "{d0} vs {d1}");
        }
    }

    #[test]
    fn frechet_mean_examples() {
        let one = SpdMatrix::from_diagonal(&[1.0]).unwrap();
        let e2 = SpdMatrix::from_diagonal(&[E * E]).unwrap();
        let m = frechet_mean(&[one.clone(), e2], RiemannianMetric::LogEuclidean).unwrap();
        assert!((m.matrix()[(0, 0)] - E).abs() < 1e-12);

        let four = SpdMatrix::from_diagonal(&[4.0]).unwrap();
        let m = frechet_mean(&[one.clone(), four], RiemannianMetric::AffineInvariant).unwrap();
        assert!((m.matrix()[(0, 0)] - 2.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(3, &mut rng);
        for metric in [RiemannianMetric::LogEuclidean, RiemannianMetric::AffineInvariant] {
            assert_eq!(frechet_mean(std::slice::from_ref(&a), metric).unwrap(), a);
        }
        assert!(frechet_mean(&[], RiemannianMetric::LogEuclidean).is_err());
    }

    #[test]
    fn airm_mean_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set: Vec<SpdMatrix> = (0..6).map(|_| random_spd(3, &mut rng)).collect();
        let m = frechet_mean(&set, RiemannianMetric::AffineInvariant).unwrap();
        let inv_half = m.inv_sqrt();
        let mut t = DMatrix::zeros(3, 3);
        for s in &set {
            t += spd_map(&s.as_symmetric().congruence(inv_half.matrix()).unwrap(), SpectralFn::Log)
                .unwrap()
                .into_matrix();
        }
        assert!(t.norm() / 6.0 < 1e-8);
    }

    #[test]
    fn tangent_vectorize_examples() {
        let id = SpdMatrix::from_diagonal(&[1.0; 3]).unwrap();
        assert!(tangent_vectorize(&id).iter().all(|&v| v.abs() < 1e-15));
        let d = SpdMatrix::from_diagonal(&[E, E]).unwrap();
        let v = tangent_vectorize(&d);
        assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14 && (v[2] - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spd(4, &mut rng);
        let v = tangent_vectorize(&s);
        let n2: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n2 - s.log().frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn spd_rejects_singular() {
        assert!(SpdMatrix::from_diagonal(&[1.0, 0.0]).is_err());
        assert!(SpdMatrix::from_diagonal(&[1.0, 1e-13]).is_err());
        let s = SpdMatrix::from_diagonal(&[3.0, 0.5]).unwrap();
        assert_eq!(s.eig_floor(), 0.5);
    }
}
