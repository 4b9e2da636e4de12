//! Per-sensor privacy step `z = A y + d` and the matching fusion maps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::SensorBlock;
use crate::psdlinalg::{psd_sqrt, robust_inverse, PsdMatrix, SymMatrix};
use crate::{Error, Real, Result};

/// Privacy step of a distributed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivacyScheme {
    /// `z = S^½ y + d`, `d ~ N(0, I)`.
    Gaussian,
    /// `z = y + d`, `d` i.i.d. Laplace with `b = 1/√s`.
    LaplaceData,
    /// `z = Hᵀ Σ_w⁻¹ y + d`, `d` i.i.d. Laplace calibrated to `s`.
    LaplaceOutput,
}

impl PrivacyScheme {
    pub fn label(self) -> &'static str {
        match self {
            PrivacyScheme::Gaussian => "gaussian",
            PrivacyScheme::LaplaceData => "laplace-data",
            PrivacyScheme::LaplaceOutput => "laplace-output",
        }
    }
}

/// Middle factor of the Gaussian fusion map `Hᵀ · F · (S^½ Σ_w S^½ + I)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainForm {
    /// `F = S^½`, which makes the online update a Newton step.
    #[default]
    RootS,
    /// `F = S`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReleaseNoise<T> {
    StandardGaussian,
    Laplace(T),
}

/// Scratch space for [`SensorRelease::measure_release_into`].
#[derive(Debug, Clone)]
pub struct ReleaseBuffers<T: Real> {
    xi: DVector<T>,
    y: DVector<T>,
}

/// One sensor's measurement model, privacy step and fusion maps.
#[derive(Debug, Clone)]
pub struct SensorRelease<T: Real> {
    h: DMatrix<T>,
    noise_root: DMatrix<T>,
    /// `A` of `z = A y + d`.
    pub a: DMatrix<T>,
    pub noise: ReleaseNoise<T>,
    /// `A H`.
    pub ah: DMatrix<T>,
    /// Maps `z` to the sensor's information vector.
    pub fuse: DMatrix<T>,
    /// Information matrix matching `fuse`, `fuse · A H`.
    pub info: PsdMatrix<T>,
}

fn scalar_budget<T: Real>(s: &PsdMatrix<T>) -> Result<T> {
    let v = s
        .as_scaled_identity(T::default_tol() * s.as_matrix().amax().max(T::one()))
        .ok_or_else(|| Error::Unsupported("Laplace baselines need a budget of the form s·I".into()))?;
    if !(v > T::zero()) {
        return Err(Error::CalibrationInfeasible("Laplace baselines need s > 0".into()));
    }
    Ok(v)
}

fn sample_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        e
    } else {
        -e
    }
}

impl<T: Real> SensorRelease<T> {
    pub fn new(block: &SensorBlock<T>, scheme: PrivacyScheme, gain_form: GainForm) -> Result<Self> {
        let h = block.h.clone();
        let m = block.m();
        let n = block.n();
        let sigma = block.noise_cov.as_matrix();
        let noise_root = psd_sqrt(&block.noise_cov).into_matrix();
        let (a, noise, fuse) = match scheme {
            PrivacyScheme::Gaussian => {
                let root = psd_sqrt(&block.s).into_matrix();
                let w = block.whitening()?;
                let middle = match gain_form {
                    GainForm::RootS => root.clone(),
                    GainForm::AsPrinted => block.s.as_matrix().clone(),
                };
                (root, ReleaseNoise::StandardGaussian, h.transpose() * middle * w)
            }
            PrivacyScheme::LaplaceData => {
                let s = scalar_budget(&block.s)?;
                let b = T::one() / s.sqrt();
                let eff = SymMatrix::new(sigma + DMatrix::identity(m, m) * (T::lit(2.0) * b * b))?;
                let p = robust_inverse(&eff, T::zero())?.into_matrix();
                (DMatrix::identity(m, m), ReleaseNoise::Laplace(b), h.transpose() * p)
            }
            PrivacyScheme::LaplaceOutput => {
                let s = scalar_budget(&block.s)?;
                let p = robust_inverse(block.noise_cov.as_sym(), T::zero())
                    .map_err(|_| Error::Singular("output perturbation needs invertible Σ_w".into()))?
                    .into_matrix();
                let a = h.transpose() * p;
                let lam = SymMatrix::new(a.transpose() * &a)?.max_eigenvalue();
                let b = (lam / s).sqrt();
                (a, ReleaseNoise::Laplace(b), DMatrix::identity(n, n))
            }
        };
        let ah = &a * &h;
        let info = match scheme {
            // keep the exact PI even when the gain form differs
            PrivacyScheme::Gaussian => block.pp_fisher()?,
            _ => PsdMatrix::from_matrix(&fuse * &ah)?,
        };
        Ok(Self {
            h,
            noise_root,
            a,
            noise,
            ah,
            fuse,
            info,
        })
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// Dimension of `z`.
    pub fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn buffers(&self) -> ReleaseBuffers<T> {
        ReleaseBuffers {
            xi: DVector::zeros(self.m()),
            y: DVector::zeros(self.m()),
        }
    }

    fn fill_noise<R: Rng + ?Sized>(&self, out: &mut DVector<T>, rng: &mut R) {
        match self.noise {
            ReleaseNoise::StandardGaussian => {
                for v in out.iter_mut() {
                    *v = T::lit(StandardNormal.sample(rng));
                }
            }
            ReleaseNoise::Laplace(b) => {
                for v in out.iter_mut() {
                    *v = b * T::lit(sample_laplace(rng));
                }
            }
        }
    }

    /// `y = H θ + w`, `w ~ N(0, Σ_w)`.
    pub fn measure<R: Rng + ?Sized>(&self, theta: &DVector<T>, rng: &mut R) -> DVector<T> {
        let xi = DVector::from_fn(self.m(), |_, _| T::lit(StandardNormal.sample(rng)));
        &self.h * theta + &self.noise_root * xi
    }

    /// `z = A y + d`.
    pub fn release<R: Rng + ?Sized>(&self, y: &DVector<T>, rng: &mut R) -> DVector<T> {
        let mut z = DVector::zeros(self.output_dim());
        self.fill_noise(&mut z, rng);
        z.gemv(T::one(), &self.a, y, T::one());
        z
    }

    /// Draws `y = H θ + w` and writes its release into `z` without allocating.
    pub fn measure_release_into<R: Rng + ?Sized>(
        &self,
        theta: &DVector<T>,
        buf: &mut ReleaseBuffers<T>,
        z: &mut DVector<T>,
        rng: &mut R,
    ) {
        for v in buf.xi.iter_mut() {
            *v = T::lit(StandardNormal.sample(rng));
        }
        buf.y.gemv(T::one(), &self.h, theta, T::zero());
        buf.y.gemv(T::one(), &self.noise_root, &buf.xi, T::one());
        self.fill_noise(z, rng);
        z.gemv(T::one(), &self.a, &buf.y, T::one());
    }
}

pub(crate) fn releases_for<T: Real>(
    blocks: &[SensorBlock<T>],
    scheme: PrivacyScheme,
    gain_form: GainForm,
) -> Result<Vec<SensorRelease<T>>> {
    blocks.iter().map(|b| SensorRelease::new(b, scheme, gain_form)).collect()
}
