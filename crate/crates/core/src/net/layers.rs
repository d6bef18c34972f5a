//! SPD layers (BiMap, ReEig, LogEig), the affine classifier head, and the
//! spectral backward rule shared by ReEig and LogEig.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spd::{sym_eig, vectorize, EigPair, SpectralFn, SymmetricMatrix};

pub const DEFAULT_REEIG_EPS: f64 = 5e-4;

/// Relative eigenvalue gap below which divided differences are replaced by
/// the derivative.
const DEGENERATE_GAP: f64 = 1e-10;

/// Relative tolerance under which a spectrum is already considered
/// rectified, so ReEig leaves the matrix untouched.
const REEIG_SLACK: f64 = 1e-9;

/// Column-orthonormal `d_in × d_out` weight of a BiMap layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelParam {
    w: DMatrix<f64>,
}

impl StiefelParam {
    /// Accepts `w` if `‖WᵀW − I‖_F ≤ tol`.
    pub fn new(w: DMatrix<f64>, tol: f64) -> Result<Self> {
        if w.ncols() > w.nrows() {
            return Err(Error::invalid(format!(
                "Stiefel weight must have d_out <= d_in, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let p = Self { w };
        let err = p.orthonormality_error();
        if !(err <= tol) {
            return Err(Error::invalid(format!("weight is not column-orthonormal (error {err:e})")));
        }
        Ok(p)
    }

    pub(crate) fn from_orthonormal_unchecked(w: DMatrix<f64>) -> Self {
        Self { w }
    }

    /// Orthonormal factor of a seeded Gaussian matrix.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let g = DMatrix::from_fn(d_in, d_out, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(Self {
            w: orthonormal_factor(g)?,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.w.transpose() * &self.w - DMatrix::identity(self.d_out(), self.d_out())).norm()
    }
}

/// Thin QR with the sign of every column chosen so that `diag(R) > 0`.
pub(crate) fn orthonormal_factor(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        if !(d.abs() > 1e-12 * scale) {
            return Err(Error::numeric(format!(
                "rank-deficient {rows}x{cols} matrix in QR (|R[{j},{j}]| = {:e})",
                d.abs()
            )));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `WᵀCW`.
pub fn bimap(c: &SymmetricMatrix, w: &StiefelParam) -> Result<SymmetricMatrix> {
    if c.dim() != w.d_in() {
        return Err(Error::invalid(format!(
            "BiMap weight expects {}x{} input, got {}x{}",
            w.d_in(),
            w.d_in(),
            c.dim(),
            c.dim()
        )));
    }
    c.congruence(w.matrix())
}

/// Output of a ReEig layer with what its backward pass needs.
#[derive(Debug, Clone)]
pub struct ReEigOutput {
    pub output: SymmetricMatrix,
    pub eig: EigPair,
    /// Spectrum already above the threshold: output is the input, bit for bit.
    pub passthrough: bool,
}

pub fn reeig_forward(c: &SymmetricMatrix, eps: f64) -> Result<ReEigOutput> {
    let eig = sym_eig(c)?;
    if eig.min_eigenvalue() >= eps * (1.0 - REEIG_SLACK) {
        return Ok(ReEigOutput {
            output: c.clone(),
            eig,
            passthrough: true,
        });
    }
    let output = eig.map(SpectralFn::ClampBelow(eps))?;
    Ok(ReEigOutput {
        output,
        eig,
        passthrough: false,
    })
}

/// `U·max(εI, Σ)·Uᵀ`; a matrix whose spectrum is already at or above `ε`
/// is returned unchanged, which makes the layer idempotent.
pub fn reeig(c: &SymmetricMatrix, eps: f64) -> Result<SymmetricMatrix> {
    Ok(reeig_forward(c, eps)?.output)
}

pub fn logeig(c: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    sym_eig(c)?.map(SpectralFn::Log)
}

fn sym_part(g: &DMatrix<f64>) -> DMatrix<f64> {
    (g + g.transpose()) * 0.5
}

/// Gradient of `L(U·f(Σ)·Uᵀ)` with respect to the symmetric input, given
/// the gradient `grad_out` on the output:
/// `U·(P ∘ (Uᵀ·sym(grad_out)·U))·Uᵀ`, with `P` the divided differences of
/// `f` on the spectrum.
pub fn eig_function_backward(grad_out: &DMatrix<f64>, eig: &EigPair, f: SpectralFn) -> DMatrix<f64> {
    let n = eig.dim();
    let lam = &eig.eigvals;
    let u = &eig.eigvecs;
    let scale = lam.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let fl: Vec<f64> = lam.iter().map(|&l| f.value(l)).collect();
    let mut inner = u.transpose() * sym_part(grad_out) * u;
    for i in 0..n {
        for j in 0..n {
            let p = if i == j {
                f.derivative(lam[i])
            } else if (lam[i] - lam[j]).abs() < DEGENERATE_GAP * scale {
                f.derivative(0.5 * (lam[i] + lam[j]))
            } else {
                (fl[i] - fl[j]) / (lam[i] - lam[j])
            };
            inner[(i, j)] *= p;
        }
    }
    sym_part(&(u * inner * u.transpose()))
}

/// Affine classifier on the vectorized final SPD feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Head {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n_classes, n_features),
            bias: DVector::zeros(n_classes),
        }
    }

    pub fn random<R: Rng>(n_classes: usize, n_features: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (n_features as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(n_classes, n_features, |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
            bias: DVector::zeros(n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, features: &[f64]) -> DVector<f64> {
        &self.weights * DVector::from_column_slice(features) + &self.bias
    }
}

pub fn log_softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.map(|z| z - lse)
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    log_softmax(logits).map(f64::exp)
}

pub fn cross_entropy(logits: &DVector<f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[label])
}

/// Logits and cross-entropy loss of the head applied to `vectorize(m)`.
pub fn head_forward(m: &SymmetricMatrix, head: &Head, label: usize) -> Result<(DVector<f64>, f64)> {
    let v = vectorize(m);
    if v.len() != head.n_features() {
        return Err(Error::invalid(format!(
            "head expects {} features, got {}",
            head.n_features(),
            v.len()
        )));
    }
    let logits = head.logits(&v);
    let loss = cross_entropy(&logits, label)?;
    Ok((logits, loss))
}
