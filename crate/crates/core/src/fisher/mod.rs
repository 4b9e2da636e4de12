//! Fisher information of noise families and the affine push-forward rule.
//!
//! Closed forms live here and are generic over the scalar. [`density`] holds
//! the `f64` scalar densities used by the quadrature oracle and the samplers;
//! [`audit`] holds the Monte Carlo score and cross-term checks.

pub mod audit;
pub mod density;
pub mod quadrature;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::psdlinalg::{robust_inverse, PsdMatrix};
use crate::{Error, Real, Result};

pub use audit::{admissibility_cross_term, empirical_score_mean, AuditEstimate};

/// Measurement or privacy noise distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFamily<T: Real> {
    Gaussian { mean: DVector<T>, cov: PsdMatrix<T> },
    LaplaceIid { scale: T, dim: usize },
    CauchyIid { scale: T, dim: usize },
    /// Density `(2/L) cos²(π (x - mid) / L)` on `[lower, upper]`, `L = upper - lower`.
    Cos2Bounded { lower: T, upper: T, dim: usize },
    /// Symmetric mixture of two raised-cosine lobes on `±center ± half_width`.
    TwinUniform { center: T, half_width: T, dim: usize },
}

impl<T: Real> NoiseFamily<T> {
    pub fn gaussian(mean: DVector<T>, cov: PsdMatrix<T>) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                context: "gaussian mean vs covariance",
                expected: cov.dim(),
                actual: mean.len(),
            });
        }
        Ok(Self::Gaussian { mean, cov })
    }

    /// `N(0, σ² I_dim)`.
    pub fn gaussian_iid(sigma: T, dim: usize) -> Result<Self> {
        positive("sigma", sigma)?;
        nonzero_dim(dim)?;
        Self::gaussian(
            DVector::zeros(dim),
            PsdMatrix::scaled_identity(dim, sigma * sigma),
        )
    }

    pub fn laplace_iid(scale: T, dim: usize) -> Result<Self> {
        positive("laplace scale", scale)?;
        nonzero_dim(dim)?;
        Ok(Self::LaplaceIid { scale, dim })
    }

    pub fn cauchy_iid(scale: T, dim: usize) -> Result<Self> {
        positive("cauchy scale", scale)?;
        nonzero_dim(dim)?;
        Ok(Self::CauchyIid { scale, dim })
    }

    pub fn cos2_bounded(lower: T, upper: T, dim: usize) -> Result<Self> {
        if !(upper > lower) {
            return Err(Error::InvalidInput("cos2 support needs upper > lower".into()));
        }
        nonzero_dim(dim)?;
        Ok(Self::Cos2Bounded { lower, upper, dim })
    }

    pub fn twin_uniform(center: T, half_width: T, dim: usize) -> Result<Self> {
        positive("twin center", center)?;
        positive("twin half width", half_width)?;
        if half_width >= center {
            return Err(Error::InvalidInput("twin half width must be below the center".into()));
        }
        nonzero_dim(dim)?;
        Ok(Self::TwinUniform {
            center,
            half_width,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::LaplaceIid { dim, .. }
            | Self::CauchyIid { dim, .. }
            | Self::Cos2Bounded { dim, .. }
            | Self::TwinUniform { dim, .. } => *dim,
        }
    }

    /// Location of the distribution (the mean where it exists, the center of
    /// symmetry otherwise).
    pub fn location(&self) -> DVector<T> {
        let half = T::lit(0.5);
        match self {
            Self::Gaussian { mean, .. } => mean.clone(),
            Self::Cos2Bounded { lower, upper, dim } => {
                DVector::from_element(*dim, (*lower + *upper) * half)
            }
            other => DVector::zeros(other.dim()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::LaplaceIid { .. } => "laplace_iid",
            Self::CauchyIid { .. } => "cauchy_iid",
            Self::Cos2Bounded { .. } => "cos2_bounded",
            Self::TwinUniform { .. } => "twin_uniform",
        }
    }
}

fn positive<T: Real>(what: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be positive and finite")))
    }
}

fn nonzero_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::InvalidInput("noise dimension must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Quantity a Fisher matrix is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    Y,
    Theta,
    HTheta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix<T: Real> {
    pub value: PsdMatrix<T>,
    pub with_respect_to: Wrt,
}

impl<T: Real> FisherMatrix<T> {
    pub fn new(value: PsdMatrix<T>, with_respect_to: Wrt) -> Self {
        Self {
            value,
            with_respect_to,
        }
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }
}

/// Scalar Fisher information of a location family with i.i.d. components.
pub fn scalar_location_fisher<T: Real>(f: &NoiseFamily<T>) -> Result<T> {
    let four_pi2 = T::lit(4.0 * PI * PI);
    match f {
        NoiseFamily::LaplaceIid { scale, .. } => Ok(T::one() / (*scale * *scale)),
        NoiseFamily::CauchyIid { scale, .. } => Ok(T::one() / (T::lit(2.0) * *scale * *scale)),
        NoiseFamily::Cos2Bounded { lower, upper, .. } => {
            let l = *upper - *lower;
            Ok(four_pi2 / (l * l))
        }
        NoiseFamily::Gaussian { .. } => Err(Error::Unsupported(
            "gaussian noise is not i.i.d. scalar in general".into(),
        )),
        NoiseFamily::TwinUniform { .. } => Err(twin_unsupported()),
    }
}

fn twin_unsupported() -> Error {
    Error::UnsupportedFamily(
        "twin_uniform is multiplicative; its Fisher information depends on the multiplicand".into(),
    )
}

/// Fisher information of `z = y + d` with respect to `y`.
pub fn fisher_of_noise<T: Real>(f: &NoiseFamily<T>) -> Result<FisherMatrix<T>> {
    let value = match f {
        NoiseFamily::Gaussian { cov, .. } => {
            PsdMatrix::new(robust_inverse(cov.as_sym(), T::zero())?)?
        }
        NoiseFamily::TwinUniform { .. } => return Err(twin_unsupported()),
        other => PsdMatrix::scaled_identity(other.dim(), scalar_location_fisher(other)?),
    };
    Ok(FisherMatrix::new(value, Wrt::Y))
}

/// `Aᵀ · inner · A`, the Fisher information of `x` when `inner` is taken with
/// respect to `A x`.
pub fn fisher_affine_pushforward<T: Real>(
    a: &DMatrix<T>,
    inner: &FisherMatrix<T>,
) -> Result<FisherMatrix<T>> {
    let value = inner.value.congruence(a)?;
    let wrt = match inner.with_respect_to {
        Wrt::Y | Wrt::HTheta | Wrt::Theta => Wrt::Theta,
    };
    Ok(FisherMatrix::new(value, wrt))
}

/// Scale-family Fisher information `J(δ) = E[(1 + D g'(D)/g(D))²]` of the
/// twin raised-cosine mixture with lobes at `±c`, half width `δ ≤ c`
/// (wider lobes overlap and the formula no longer holds).
///
/// For `z = D · u` the Fisher information about `u` is `J / u²`.
pub fn twin_scale_fisher(center: f64, half_width: f64) -> f64 {
    let r = center / half_width;
    PI * PI * r * r + PI * PI / 3.0 + 1.0
}

/// Inverse of [`twin_scale_fisher`] in `δ`; `None` when `j` is at or below
/// the value at `δ = c`, the widest admissible lobe.
pub fn twin_half_width_for(center: f64, j: f64) -> Option<f64> {
    let floor = PI * PI / 3.0 + 1.0;
    let j_min = twin_scale_fisher(center, center);
    if !(j > j_min) || !j.is_finite() {
        return None;
    }
    Some(PI * center / (j - floor).sqrt())
}

#[cfg(test)]
mod tests {
    use super::density::ScalarDensity;
    use super::quadrature::fisher_by_quadrature;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_identity() {
        let f = NoiseFamily::gaussian(DVector::zeros(3), PsdMatrix::<f64>::identity(3)).unwrap();
        let fi = fisher_of_noise(&f).unwrap();
        assert_relative_eq!(*fi.value.as_matrix(), DMatrix::identity(3, 3), epsilon = 1e-14);
        assert_eq!(fi.with_respect_to, Wrt::Y);
    }

    #[test]
    fn closed_form_examples() {
        let lap = fisher_of_noise(&NoiseFamily::laplace_iid(2.0, 1).unwrap()).unwrap();
        assert_relative_eq!(lap.value.as_matrix()[(0, 0)], 0.25);
        let cos = fisher_of_noise(&NoiseFamily::cos2_bounded(-1.0, 1.0, 1).unwrap()).unwrap();
        assert_relative_eq!(cos.value.as_matrix()[(0, 0)], PI * PI, epsilon = 1e-12);
        let cau = fisher_of_noise(&NoiseFamily::cauchy_iid(1.0, 1).unwrap()).unwrap();
        assert_relative_eq!(cau.value.as_matrix()[(0, 0)], 0.5);
    }

    #[test]
    fn examples_match_quadrature_oracle() {
        assert_relative_eq!(
            fisher_by_quadrature(&ScalarDensity::Laplace { b: 2.0 }),
            0.25,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            fisher_by_quadrature(&ScalarDensity::Cos2 { lower: -1.0, upper: 1.0 }),
            PI * PI,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            fisher_by_quadrature(&ScalarDensity::Cauchy { gamma: 1.0 }),
            0.5,
            max_relative = 1e-6
        );
    }

    #[test]
    fn twin_is_unsupported() {
        let f = NoiseFamily::twin_uniform(1.0, 0.5, 1).unwrap();
        assert!(matches!(fisher_of_noise(&f), Err(Error::UnsupportedFamily(_))));
    }

    #[test]
    fn twin_closed_form_matches_quadrature() {
        for &delta in &[0.1, 0.25, 0.5, 0.9] {
            let q = quadrature::twin_scale_fisher_by_quadrature(1.0, delta);
            assert_relative_eq!(twin_scale_fisher(1.0, delta), q, max_relative = 1e-6);
        }
        assert_relative_eq!(twin_scale_fisher(1.0, 0.5), 4.0 * PI * PI + PI * PI / 3.0 + 1.0);
        let d = twin_half_width_for(1.0, twin_scale_fisher(1.0, 0.3)).unwrap();
        assert_relative_eq!(d, 0.3, epsilon = 1e-12);
        assert!(twin_half_width_for(1.0, twin_scale_fisher(1.0, 1.0)).is_none());
    }

    #[test]
    fn pushforward_examples() {
        let inner = FisherMatrix::new(PsdMatrix::<f64>::identity(2), Wrt::Y);
        let same = fisher_affine_pushforward(&DMatrix::identity(2, 2), &inner).unwrap();
        assert_eq!(same.value.as_matrix(), inner.value.as_matrix());
        let ones = DMatrix::from_element(2, 1, 1.0);
        let s = fisher_affine_pushforward(&ones, &inner).unwrap();
        assert_relative_eq!(s.value.as_matrix()[(0, 0)], 2.0);
        assert!(fisher_affine_pushforward(&DMatrix::identity(3, 3), &inner).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseFamily::<f64>::laplace_iid(0.0, 1).is_err());
        assert!(NoiseFamily::<f64>::cauchy_iid(-1.0, 1).is_err());
        assert!(NoiseFamily::<f64>::cos2_bounded(1.0, 1.0, 1).is_err());
        assert!(NoiseFamily::<f64>::twin_uniform(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn single_precision_closed_forms() {
        let f = NoiseFamily::<f32>::laplace_iid(0.5, 2).unwrap();
        let fi = fisher_of_noise(&f).unwrap();
        assert!((fi.value.as_matrix()[(1, 1)] - 4.0).abs() < 1e-5);
    }
}
