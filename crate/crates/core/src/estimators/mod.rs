//! Estimators paired with each mechanism.

pub mod likelihood;
mod mle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::SensorBlock;
use crate::mechanisms::{least_squares_map, MeasurementModel, Mechanism, MechanismClass, Scope};
use crate::psdlinalg::{robust_inverse, PsdMatrix};
use crate::{Error, Result};

use likelihood::{LaplaceGauss, Voigt};
use mle::{Fit, Kernel, NegLogLik};

pub use mle::{CONVERGED_GRAD, GRAD_TOL, MAX_ITERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    OptimalLinear,
    LeastSquares,
    MleLaplace,
    MleCauchy,
    OutputPerturbation,
    TwinCentral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: u64,
    pub converged: bool,
}

impl Diagnostics {
    fn closed_form() -> Self {
        Self {
            iterations: 0,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta_hat: DVector<f64>,
    pub estimator_id: EstimatorId,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    fn closed(theta_hat: DVector<f64>, estimator_id: EstimatorId) -> Self {
        Self {
            theta_hat,
            estimator_id,
            diagnostics: Diagnostics::closed_form(),
        }
    }
}

fn check_len(z: &DVector<f64>, m: usize) -> Result<()> {
    if z.len() != m {
        return Err(Error::DimensionMismatch {
            context: "observation length",
            expected: m,
            actual: z.len(),
        });
    }
    Ok(())
}

/// `θ̂ = (HᵀH)⁻¹ Hᵀ z`, precomputed.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    map: DMatrix<f64>,
}

impl LeastSquares {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            map: least_squares_map(h)?,
        })
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.map * z
    }
}

pub fn least_squares(z: &DVector<f64>, h: &DMatrix<f64>) -> Result<Estimate> {
    check_len(z, h.nrows())?;
    Ok(Estimate::closed(LeastSquares::new(h)?.apply(z), EstimatorId::LeastSquares))
}

/// `θ̂ = Σ_PPCR Hᵀ S^½ (S^½ Σ_w S^½ + I)⁻¹ z`, precomputed. The Gaussian
/// optimal mechanism already removes `S^½ μ_w` from `z`.
#[derive(Debug, Clone)]
pub struct OptimalLinear {
    map: DMatrix<f64>,
    sigma_ppcr: PsdMatrix<f64>,
}

impl OptimalLinear {
    pub fn new(model: &MeasurementModel, s: &PsdMatrix<f64>) -> Result<Self> {
        let cov = model
            .gaussian_cov()
            .ok_or_else(|| Error::Unsupported("optimal linear estimator needs gaussian noise".into()))?;
        let block = SensorBlock::new(model.h().clone(), s.clone(), cov.clone())?;
        if !crate::bounds::identifiable_under_privacy(model.h(), s)? {
            return Err(Error::NotIdentifiable);
        }
        let gain = block.gain()?;
        let pf = block.pp_fisher()?;
        let sigma = robust_inverse(pf.as_sym(), 0.0).map_err(|_| Error::NotIdentifiable)?;
        Ok(Self {
            map: sigma.as_matrix() * gain,
            sigma_ppcr: PsdMatrix::new(sigma)?,
        })
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.map * z
    }

    pub fn sigma_ppcr(&self) -> &PsdMatrix<f64> {
        &self.sigma_ppcr
    }
}

pub fn optimal_linear_estimate(
    z: &DVector<f64>,
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
) -> Result<Estimate> {
    check_len(z, model.m())?;
    Ok(Estimate::closed(OptimalLinear::new(model, s)?.apply(z), EstimatorId::OptimalLinear))
}

fn gaussian_sds(model: &MeasurementModel) -> Result<Vec<f64>> {
    let cov = model
        .gaussian_cov()
        .ok_or_else(|| Error::Unsupported("MLE needs gaussian measurement noise".into()))?
        .as_matrix();
    let m = cov.nrows();
    for i in 0..m {
        for j in 0..m {
            if i != j && cov[(i, j)] != 0.0 {
                return Err(Error::Unsupported("MLE needs diagonal measurement covariance".into()));
            }
        }
    }
    Ok((0..m).map(|i| cov[(i, i)].sqrt()).collect())
}

/// Reusable MLE for a fixed model and noise scale.
#[derive(Debug, Clone)]
pub struct ConvolvedMle {
    h: DMatrix<f64>,
    mu: DVector<f64>,
    kernels: Vec<Kernel>,
    ls: LeastSquares,
    id: EstimatorId,
    /// Multi-start offsets added to the least-squares seed.
    offsets: Vec<DVector<f64>>,
}

/// Number of starting points of the Cauchy MLE.
pub const CAUCHY_STARTS: usize = 5;

impl ConvolvedMle {
    pub fn laplace(model: &MeasurementModel, b: f64) -> Result<Self> {
        Self::build(model, b, EstimatorId::MleLaplace, |sigma| Kernel::Laplace(LaplaceGauss { sigma, b }), 1)
    }

    pub fn cauchy(model: &MeasurementModel, gamma: f64) -> Result<Self> {
        Self::build(model, gamma, EstimatorId::MleCauchy, |sigma| Kernel::Voigt(Voigt { sigma, gamma }), CAUCHY_STARTS)
    }

    fn build(
        model: &MeasurementModel,
        scale: f64,
        id: EstimatorId,
        kernel: impl Fn(f64) -> Kernel,
        starts: usize,
    ) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput("noise scale must be finite and non-negative".into()));
        }
        let sds = gaussian_sds(model)?;
        if sds.iter().any(|s| *s <= 0.0) {
            return Err(Error::Unsupported("MLE needs positive measurement noise".into()));
        }
        let ls = LeastSquares::new(model.h())?;
        let n = model.n();
        let kernels = if scale == 0.0 { Vec::new() } else { sds.iter().map(|&s| kernel(s)).collect() };
        // starts: LS seed, then ± a typical error scale along 1 and (+1, -1, ...)
        let typical = {
            let gram = crate::psdlinalg::SymMatrix::new(model.h().transpose() * model.h())?;
            let tr = robust_inverse(&gram, 0.0)?.trace();
            let s2 = sds.iter().map(|s| s * s).sum::<f64>() / sds.len() as f64;
            (tr / n as f64 * (s2 + scale * scale)).sqrt()
        };
        let ones = DVector::from_element(n, 1.0);
        let alt = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let mut offsets = vec![DVector::zeros(n)];
        for v in [&ones, &alt] {
            offsets.push(v * typical);
            offsets.push(v * -typical);
        }
        offsets.truncate(starts);
        Ok(Self {
            h: model.h().clone(),
            mu: model.noise_mean(),
            kernels,
            ls,
            id,
            offsets,
        })
    }

    pub fn estimate(&self, z: &DVector<f64>) -> Result<Estimate> {
        check_len(z, self.h.nrows())?;
        let r = z - &self.mu;
        let seed = self.ls.apply(&r);
        if self.kernels.is_empty() {
            return Ok(Estimate::closed(seed, self.id));
        }
        let mut best: Option<Fit> = None;
        for off in &self.offsets {
            let init = (&seed + off).iter().copied().collect();
            let fit = mle::minimize(
                NegLogLik::new(&self.h, &r, &self.kernels),
                init,
            );
            best = Some(match best {
                None => fit,
                Some(b) => {
                    let better = match (fit.converged, b.converged) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => fit.cost < b.cost,
                    };
                    if better {
                        fit
                    } else {
                        b
                    }
                }
            });
        }
        let fit = best.expect("at least one start");
        Ok(Estimate {
            theta_hat: DVector::from_vec(fit.theta),
            estimator_id: self.id,
            diagnostics: Diagnostics {
                iterations: fit.iterations,
                converged: fit.converged,
            },
        })
    }

    /// Gradient of the negative log-likelihood at `theta`.
    pub fn gradient(&self, z: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let r = z - &self.mu;
        let p = NegLogLik::new(&self.h, &r, &self.kernels);
        DVector::from_vec(p.grad(theta.as_slice()))
    }
}

/// MLE under `z = y + Laplace(b)` noise with Gaussian `w`.
pub fn mle_laplace_data(z: &DVector<f64>, model: &MeasurementModel, b: f64) -> Result<Estimate> {
    ConvolvedMle::laplace(model, b)?.estimate(z)
}

/// MLE under `z = y + Cauchy(γ)` noise with Gaussian `w`, multi-start.
pub fn mle_cauchy_data(z: &DVector<f64>, model: &MeasurementModel, gamma: f64) -> Result<Estimate> {
    ConvolvedMle::cauchy(model, gamma)?.estimate(z)
}

/// The released value is the estimate.
pub fn output_perturbation_estimate(z: &DVector<f64>) -> Estimate {
    Estimate::closed(z.clone(), EstimatorId::OutputPerturbation)
}

/// Central estimator of the twin multiplicative mechanism:
/// `ŷ_j = sign_j |z_j| / c - b_j`, then least squares.
#[derive(Debug, Clone)]
pub struct TwinCentral {
    signs: DVector<f64>,
    offset: DVector<f64>,
    center: f64,
    ls: LeastSquares,
}

impl TwinCentral {
    pub fn new(model: &MeasurementModel, mech: &Mechanism) -> Result<Self> {
        let (MechanismClass::Multiplicative { offset, noise }, Scope::Region { low, high }) = (&mech.class, &mech.scope)
        else {
            return Err(Error::Unsupported("central estimator needs a region-scoped multiplicative mechanism".into()));
        };
        let crate::fisher::NoiseFamily::TwinUniform { center, .. } = noise else {
            return Err(Error::Unsupported("central estimator needs twin lobes".into()));
        };
        mech.check_input_dim(model.m())?;
        let mut signs = DVector::zeros(offset.len());
        for j in 0..offset.len() {
            let (a, b) = (low[j] + offset[j], high[j] + offset[j]);
            signs[j] = if a > 0.0 && b > 0.0 {
                1.0
            } else if a < 0.0 && b < 0.0 {
                -1.0
            } else {
                return Err(Error::InvalidInput(format!("region of component {j} is not sign-definite")));
            };
        }
        Ok(Self {
            signs,
            offset: offset.clone(),
            center: *center,
            ls: LeastSquares::new(model.h())?,
        })
    }

    pub fn recover_y(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |j, _| self.signs[j] * z[j].abs() / self.center - self.offset[j])
    }

    pub fn estimate(&self, z: &DVector<f64>) -> Result<Estimate> {
        check_len(z, self.signs.len())?;
        Ok(Estimate::closed(self.ls.apply(&self.recover_y(z)), EstimatorId::TwinCentral))
    }
}

pub fn twin_uniform_central_estimate(
    z: &DVector<f64>,
    model: &MeasurementModel,
    mech: &Mechanism,
) -> Result<Estimate> {
    TwinCentral::new(model, mech)?.estimate(z)
}
