//! Symmetric and positive semidefinite matrices.
//!
//! [`SymMatrix`] is exactly symmetric by construction. [`PsdMatrix`] adds the
//! spectral invariant `λ_min ≥ -tol · max(1, λ_max)` and clamps the small
//! negative eigenvalues that appear after products such as `S^½ Σ S^½`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<T>", into = "DMatrix<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct SymMatrix<T: Real> {
    inner: DMatrix<T>,
}

impl<T: Real> SymMatrix<T> {
    /// Symmetrizes `m` as `(m + mᵀ)/2`, then mirrors the upper triangle so the
    /// result is bitwise symmetric.
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let half = T::lit(0.5);
        let mut s = (&m + m.transpose()) * half;
        let n = s.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
        Ok(Self { inner: s })
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::zeros(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, scale: T) -> Self {
        Self::identity(dim).scale(scale)
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.inner
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            inner: &self.inner * c,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_dim("add", self.dim(), other.dim())?;
        Ok(Self {
            inner: &self.inner + &other.inner,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_dim("sub", self.dim(), other.dim())?;
        Ok(Self {
            inner: &self.inner - &other.inner,
        })
    }

    pub fn trace(&self) -> T {
        self.inner.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let mut ev: Vec<T> = SymmetricEigen::new(self.inner.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        ev
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> T {
        *self.eigenvalues().last().expect("dim >= 1")
    }

    /// Spectral norm `max |λ|`.
    pub fn spectral_norm(&self) -> T {
        let ev = self.eigenvalues();
        let lo = ev[0].abs();
        let hi = ev[ev.len() - 1].abs();
        if lo > hi {
            lo
        } else {
            hi
        }
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> T {
        self.inner.norm()
    }

    /// `Aᵀ · self · A` for a rectangular `A` whose row count matches `dim`.
    pub fn congruence(&self, a: &DMatrix<T>) -> Result<Self> {
        if a.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "congruence",
                expected: self.dim(),
                actual: a.nrows(),
            });
        }
        Self::new(a.transpose() * &self.inner * a)
    }
}

impl<T: Real> TryFrom<DMatrix<T>> for SymMatrix<T> {
    type Error = Error;

    fn try_from(m: DMatrix<T>) -> Result<Self> {
        Self::new(m)
    }
}

impl<T: Real> From<SymMatrix<T>> for DMatrix<T> {
    fn from(s: SymMatrix<T>) -> Self {
        s.inner
    }
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrix<T>", into = "SymMatrix<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct PsdMatrix<T: Real> {
    base: SymMatrix<T>,
}

impl<T: Real> PsdMatrix<T> {
    /// Validates the PSD invariant, clamping eigenvalues in `[-tol, 0)` to zero.
    pub fn new(base: SymMatrix<T>) -> Result<Self> {
        let eig = SymmetricEigen::new(base.inner.clone());
        let (min, max) = extremes(eig.eigenvalues.as_slice());
        let one = T::one();
        let scale = if max > one { max } else { one };
        let tol = T::default_tol();
        if min < -(tol * scale) {
            return Err(Error::NotPsd {
                min_eigenvalue: min.as_f64(),
            });
        }
        if min < T::zero() {
            let clamped = eig.eigenvalues.map(|l| if l < T::zero() { T::zero() } else { l });
            let rebuilt = &eig.eigenvectors
                * DMatrix::from_diagonal(&clamped)
                * eig.eigenvectors.transpose();
            return Ok(Self {
                base: SymMatrix::new(rebuilt)?,
            });
        }
        Ok(Self { base })
    }

    pub fn from_matrix(m: DMatrix<T>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            base: SymMatrix::identity(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            base: SymMatrix::zeros(dim),
        }
    }

    /// `s · I`; panics on negative `s`.
    pub fn scaled_identity(dim: usize, s: T) -> Self {
        assert!(s >= T::zero(), "scaled identity needs s >= 0");
        Self {
            base: SymMatrix::scaled_identity(dim, s),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag)?)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix<T> {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        self.base.as_matrix()
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.base.into_matrix()
    }

    pub fn trace(&self) -> T {
        self.base.trace()
    }

    /// `Aᵀ · self · A`, which stays PSD.
    pub fn congruence(&self, a: &DMatrix<T>) -> Result<Self> {
        Self::new(self.base.congruence(a)?)
    }

    /// Returns `Some(s)` when the matrix is `s · I` up to `tol` (absolute).
    pub fn as_scaled_identity(&self, tol: T) -> Option<T> {
        let m = self.as_matrix();
        let s = m[(0, 0)];
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { s } else { T::zero() };
                if (m[(i, j)] - target).abs() > tol {
                    return None;
                }
            }
        }
        Some(s)
    }
}

impl<T: Real> TryFrom<SymMatrix<T>> for PsdMatrix<T> {
    type Error = Error;

    fn try_from(s: SymMatrix<T>) -> Result<Self> {
        Self::new(s)
    }
}

impl<T: Real> From<PsdMatrix<T>> for SymMatrix<T> {
    fn from(p: PsdMatrix<T>) -> Self {
        p.base
    }
}

fn extremes<T: Real>(values: &[T]) -> (T, T) {
    values.iter().fold((values[0], values[0]), |(lo, hi), &v| {
        (if v < lo { v } else { lo }, if v > hi { v } else { hi })
    })
}

fn check_same_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Principal square root via symmetric eigendecomposition, with negative
/// eigenvalues clamped to zero so rank-deficient inputs are handled.
pub fn psd_sqrt<T: Real>(a: &PsdMatrix<T>) -> PsdMatrix<T> {
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let roots = eig
        .eigenvalues
        .map(|l| if l > T::zero() { l.sqrt() } else { T::zero() });
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    PsdMatrix {
        base: SymMatrix::new(r).expect("square root of a finite PSD matrix is finite"),
    }
}

/// `A ≤ B` in the Loewner order, i.e. `λ_min(B - A) ≥ -tol · max(1, ‖B - A‖₂)`.
pub fn loewner_leq<T: Real>(a: &SymMatrix<T>, b: &SymMatrix<T>, tol: T) -> Result<bool> {
    let diff = b.sub(a)?;
    let ev = diff.eigenvalues();
    let min = ev[0];
    let norm = {
        let lo = ev[0].abs();
        let hi = ev[ev.len() - 1].abs();
        if lo > hi {
            lo
        } else {
            hi
        }
    };
    let scale = if norm > T::one() { norm } else { T::one() };
    Ok(min >= -(tol * scale))
}

/// True iff `candidate` belongs to `family` (entrywise within `tol`) and
/// dominates every member in the Loewner order. Such a member is the matrix
/// supremum of the family.
pub fn is_matrix_supremum<T: Real>(
    candidate: &SymMatrix<T>,
    family: &[SymMatrix<T>],
    tol: T,
) -> Result<bool> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    for f in family {
        check_same_dim("is_matrix_supremum", candidate.dim(), f.dim())?;
    }
    let is_member = family.iter().any(|f| {
        let scale = f.as_matrix().amax();
        let scale = if scale > T::one() { scale } else { T::one() };
        (candidate.as_matrix() - f.as_matrix()).amax() <= tol * scale
    });
    if !is_member {
        return Ok(false);
    }
    for f in family {
        if !loewner_leq(f, candidate, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Condition number above which an unregularized inverse is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of `A + ridge·I` through the symmetric eigendecomposition.
///
/// With `ridge = 0` the matrix must be positive or negative definite with
/// condition number below [`MAX_CONDITION`]; otherwise [`Error::Singular`].
pub fn robust_inverse<T: Real>(a: &SymMatrix<T>, ridge: T) -> Result<SymMatrix<T>> {
    if ridge < T::zero() {
        return Err(Error::InvalidInput("ridge must be non-negative".into()));
    }
    let n = a.dim();
    let shifted = a.as_matrix() + DMatrix::<T>::identity(n, n) * ridge;
    let eig = SymmetricEigen::new(shifted);
    let abs: Vec<T> = eig.eigenvalues.iter().map(|l| l.abs()).collect();
    let (lo, hi) = extremes(&abs);
    if lo == T::zero() || hi / lo >= T::lit(MAX_CONDITION) {
        return Err(Error::Singular(format!(
            "condition number {:e} exceeds {:e}",
            (hi / lo).as_f64(),
            MAX_CONDITION
        )));
    }
    let inv = eig.eigenvalues.map(|l| T::one() / l);
    SymMatrix::new(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}
