//! Calibrated stochastic obfuscation mechanisms.
//!
//! Every calibrator returns a [`Mechanism`] whose Fisher information about `y`
//! is bounded by the requested budget `S` (globally, or on a region for the
//! multiplicative class), with equality wherever a closed form allows it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fisher::density::NoiseSampler;
use crate::fisher::{
    fisher_affine_pushforward, fisher_of_noise, twin_scale_fisher, FisherMatrix, NoiseFamily, Wrt,
};
use crate::psdlinalg::{psd_sqrt, robust_inverse, PsdMatrix, SymMatrix};
use crate::{Error, Result};

/// Linear measurement `y = H θ + w`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    h: DMatrix<f64>,
    noise: NoiseFamily<f64>,
    sampler: NoiseSampler,
}

impl MeasurementModel {
    pub fn new(h: DMatrix<f64>, noise: NoiseFamily<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::InvalidInput("H must be non-empty".into()));
        }
        if noise.dim() != h.nrows() {
            return Err(Error::DimensionMismatch {
                context: "measurement noise vs rows of H",
                expected: h.nrows(),
                actual: noise.dim(),
            });
        }
        if matches!(noise, NoiseFamily::CauchyIid { .. }) {
            return Err(Error::InvalidInput("measurement noise needs a finite covariance".into()));
        }
        let sampler = NoiseSampler::new(&noise);
        Ok(Self { h, noise, sampler })
    }

    /// `w ~ N(0, σ² I_m)`.
    pub fn gaussian_iid(h: DMatrix<f64>, sigma: f64) -> Result<Self> {
        let m = h.nrows();
        Self::new(h, NoiseFamily::gaussian_iid(sigma, m)?)
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn noise(&self) -> &NoiseFamily<f64> {
        &self.noise
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn noise_mean(&self) -> DVector<f64> {
        self.noise.location()
    }

    pub fn gaussian_cov(&self) -> Option<&PsdMatrix<f64>> {
        match &self.noise {
            NoiseFamily::Gaussian { cov, .. } => Some(cov),
            _ => None,
        }
    }

    pub fn sample_w<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.sampler.sample(rng)
    }

    pub fn sample_y<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        &self.h * theta + self.sample_w(rng)
    }
}

/// Scenario-file name of a mechanism/estimator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    GaussianOptimal,
    LaplaceData,
    LaplaceOutput,
    CauchyData,
    Cos2Data,
    Cos2Output,
    TwinUniformMult,
    /// `z = y + (1 + y²) d`: a planted mechanism that violates admissibility.
    FoldInadmissible,
    Custom,
}

impl MechanismKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::GaussianOptimal => "gaussian-optimal",
            Self::LaplaceData => "laplace-data",
            Self::LaplaceOutput => "laplace-output",
            Self::CauchyData => "cauchy-data",
            Self::Cos2Data => "cos2-data",
            Self::Cos2Output => "cos2-output",
            Self::TwinUniformMult => "twin-uniform-mult",
            Self::FoldInadmissible => "fold-inadmissible",
            Self::Custom => "custom",
        }
    }
}

/// `{"kind": ..., "budget_s": ...}` as found in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismDescriptor {
    pub kind: MechanismKind,
    #[serde(default)]
    pub budget_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scope {
    Global,
    Region {
        low: DVector<f64>,
        high: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MechanismClass {
    /// `z = A y + offset + B d`.
    Affine {
        a: DMatrix<f64>,
        offset: DVector<f64>,
        b: DMatrix<f64>,
        noise: NoiseFamily<f64>,
    },
    /// `z_j = D_j (y_j + offset_j)`, `D_j` i.i.d. twin lobes.
    Multiplicative {
        offset: DVector<f64>,
        noise: NoiseFamily<f64>,
    },
    /// `z_j = y_j + (1 + y_j²) d_j`, `d_j ~ N(0, variance)`.
    Fold { variance: f64 },
}

#[derive(Debug, Clone)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub class: MechanismClass,
    /// The budget `S` with `I_z(y) ≤ S` on `scope`.
    pub certified_bound: PsdMatrix<f64>,
    pub scope: Scope,
    sampler: NoiseSampler,
    /// `B⁻¹ A` for affine mechanisms with invertible `B`.
    whitened_a: Option<DMatrix<f64>>,
}

impl Mechanism {
    pub fn affine(
        kind: MechanismKind,
        a: DMatrix<f64>,
        offset: DVector<f64>,
        b: DMatrix<f64>,
        noise: NoiseFamily<f64>,
        certified_bound: PsdMatrix<f64>,
    ) -> Result<Self> {
        if offset.len() != a.nrows() || b.nrows() != a.nrows() || b.ncols() != noise.dim() {
            return Err(Error::DimensionMismatch {
                context: "affine mechanism",
                expected: a.nrows(),
                actual: b.nrows(),
            });
        }
        if certified_bound.dim() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "certified bound",
                expected: a.ncols(),
                actual: certified_bound.dim(),
            });
        }
        let whitened_a = if b.is_square() {
            b.clone().try_inverse().map(|bi| bi * &a)
        } else {
            None
        };
        Ok(Self {
            kind,
            sampler: NoiseSampler::new(&noise),
            class: MechanismClass::Affine { a, offset, b, noise },
            certified_bound,
            scope: Scope::Global,
            whitened_a,
        })
    }

    /// Dimension of the sensitive input `y`.
    pub fn input_dim(&self) -> usize {
        match &self.class {
            MechanismClass::Affine { a, .. } => a.ncols(),
            MechanismClass::Multiplicative { offset, .. } => offset.len(),
            MechanismClass::Fold { .. } => self.certified_bound.dim(),
        }
    }

    /// Dimension of the released `z`.
    pub fn output_dim(&self) -> usize {
        match &self.class {
            MechanismClass::Affine { a, .. } => a.nrows(),
            _ => self.input_dim(),
        }
    }

    pub fn check_input_dim(&self, m: usize) -> Result<()> {
        if self.input_dim() != m {
            return Err(Error::DimensionMismatch {
                context: "mechanism input",
                expected: self.input_dim(),
                actual: m,
            });
        }
        Ok(())
    }

    /// The privacy noise family, if the class has one.
    pub fn noise_family(&self) -> Option<&NoiseFamily<f64>> {
        match &self.class {
            MechanismClass::Affine { noise, .. } | MechanismClass::Multiplicative { noise, .. } => {
                Some(noise)
            }
            MechanismClass::Fold { .. } => None,
        }
    }

    /// One draw `z = M(y, d)`, together with the privacy noise `d`.
    pub fn sample_with_noise<R: Rng + ?Sized>(
        &self,
        y: &DVector<f64>,
        rng: &mut R,
    ) -> (DVector<f64>, DVector<f64>) {
        match &self.class {
            MechanismClass::Affine { a, offset, b, .. } => {
                let d = self.sampler.sample(rng);
                (a * y + offset + b * &d, d)
            }
            MechanismClass::Multiplicative { offset, .. } => {
                let d = self.sampler.sample(rng);
                let z = d.zip_zip_map(y, offset, |dj, yj, bj| dj * (yj + bj));
                (z, d)
            }
            MechanismClass::Fold { variance } => {
                let sd = variance.sqrt();
                let d = DVector::from_fn(y.len(), |_, _| {
                    sd * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
                });
                let z = y.zip_map(&d, |yj, dj| yj + (1.0 + yj * yj) * dj);
                (z, d)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, y: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        self.sample_with_noise(y, rng).0
    }

    /// `∂ ln p(z | y) / ∂y` evaluated at the draw that produced noise `d`.
    pub fn score_wrt_y(&self, y: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.class {
            MechanismClass::Affine { .. } => {
                let wa = self.whitened_a.as_ref().ok_or_else(|| {
                    Error::Unsupported("score needs an invertible noise map".into())
                })?;
                Ok(-(wa.transpose() * self.sampler.grad_log_density(d)?))
            }
            MechanismClass::Multiplicative { offset, .. } => {
                let g = self.sampler.scalar_density().expect("twin lobes are scalar");
                Ok(DVector::from_fn(y.len(), |j, _| {
                    let u = y[j] + offset[j];
                    -(1.0 + d[j] * g.score(d[j])) / u
                }))
            }
            MechanismClass::Fold { variance } => Ok(DVector::from_fn(y.len(), |j, _| {
                let (yj, dj) = (y[j], d[j]);
                (dj / variance + 2.0 * yj * (dj * dj / variance - 1.0)) / (1.0 + yj * yj)
            })),
        }
    }

    /// Fisher information `I_z(y)` of the released value about `y`.
    pub fn fisher_at(&self, y: &DVector<f64>) -> Result<FisherMatrix<f64>> {
        match &self.class {
            MechanismClass::Affine { noise, .. } => {
                let wa = self.whitened_a.as_ref().ok_or_else(|| {
                    Error::Unsupported("fisher needs an invertible noise map".into())
                })?;
                let inner = fisher_of_noise(noise)?;
                let mut f = fisher_affine_pushforward(wa, &inner)?;
                f.with_respect_to = Wrt::Y;
                Ok(f)
            }
            MechanismClass::Multiplicative { offset, noise } => {
                let NoiseFamily::TwinUniform {
                    center, half_width, ..
                } = noise
                else {
                    return Err(Error::Unsupported("multiplicative noise must be twin lobes".into()));
                };
                let j = twin_scale_fisher(*center, *half_width);
                let diag: Vec<f64> = y.iter().zip(offset.iter()).map(|(yj, bj)| j / (yj + bj).powi(2)).collect();
                Ok(FisherMatrix::new(PsdMatrix::from_diagonal(&diag)?, Wrt::Y))
            }
            MechanismClass::Fold { variance } => {
                let diag: Vec<f64> = y.iter().map(|&v| fold_fisher(v, *variance)).collect();
                Ok(FisherMatrix::new(PsdMatrix::from_diagonal(&diag)?, Wrt::Y))
            }
        }
    }
}

fn fold_fisher(y: f64, variance: f64) -> f64 {
    let q = 1.0 + y * y;
    1.0 / (q * q * variance) + 8.0 * y * y / (q * q)
}

/// `s` when `S = s · I` with `s > 0`.
pub fn scalar_budget(s: &PsdMatrix<f64>) -> Result<f64> {
    let v = s.as_matrix()[(0, 0)];
    let val = s
        .as_scaled_identity(1e-12 * v.abs().max(1.0))
        .ok_or_else(|| Error::Unsupported("i.i.d. calibration needs S = s I".into()))?;
    if !(val > 0.0) {
        return Err(Error::InvalidInput("budget s must be positive".into()));
    }
    Ok(val)
}

fn check_budget_dim(s: &PsdMatrix<f64>, m: usize) -> Result<()> {
    if s.dim() != m {
        return Err(Error::DimensionMismatch {
            context: "budget S vs measurement dimension",
            expected: m,
            actual: s.dim(),
        });
    }
    Ok(())
}

/// `z = S^½ (y - E[w]) + d`, `d ~ N(0, I)`. Attains `I_z(y) = S`.
pub fn gaussian_optimal_mechanism(model: &MeasurementModel, s: &PsdMatrix<f64>) -> Result<Mechanism> {
    let m = model.m();
    check_budget_dim(s, m)?;
    let root = psd_sqrt(s).into_matrix();
    let offset = -(&root * model.noise_mean());
    Mechanism::affine(
        MechanismKind::GaussianOptimal,
        root,
        offset,
        DMatrix::identity(m, m),
        NoiseFamily::gaussian(DVector::zeros(m), PsdMatrix::identity(m))?,
        s.clone(),
    )
}

/// `z = y + d`, `d` i.i.d. Laplace with `b = 1/√s`.
pub fn calibrate_laplace_data_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
) -> Result<Mechanism> {
    data_perturbation(model, s, MechanismKind::LaplaceData, |sv, m| {
        NoiseFamily::laplace_iid(1.0 / sv.sqrt(), m)
    })
}

/// `z = y + d`, `d` i.i.d. Cauchy with `γ = 1/√(2s)`.
pub fn calibrate_cauchy_data_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
) -> Result<Mechanism> {
    data_perturbation(model, s, MechanismKind::CauchyData, |sv, m| {
        NoiseFamily::cauchy_iid(1.0 / (2.0 * sv).sqrt(), m)
    })
}

/// `z = y + d`, `d` i.i.d. cos² on a centered interval of width `2π/√s`.
pub fn calibrate_cos2_mechanism(model: &MeasurementModel, s: &PsdMatrix<f64>) -> Result<Mechanism> {
    data_perturbation(model, s, MechanismKind::Cos2Data, |sv, m| {
        let half = PI / sv.sqrt();
        NoiseFamily::cos2_bounded(-half, half, m)
    })
}

fn data_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
    kind: MechanismKind,
    family: impl Fn(f64, usize) -> Result<NoiseFamily<f64>>,
) -> Result<Mechanism> {
    let m = model.m();
    check_budget_dim(s, m)?;
    let sv = scalar_budget(s)?;
    Mechanism::affine(
        kind,
        DMatrix::identity(m, m),
        DVector::zeros(m),
        DMatrix::identity(m, m),
        family(sv, m)?,
        s.clone(),
    )
}

/// `(HᵀH)⁻¹ Hᵀ`, the least-squares map.
pub fn least_squares_map(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = SymMatrix::new(h.transpose() * h)?;
    let inv = robust_inverse(&gram, 0.0).map_err(|_| Error::NotIdentifiable)?;
    Ok(inv.as_matrix() * h.transpose())
}

/// `λ_max((HᵀH)⁻¹)`, the largest eigenvalue of `AᵀA` for the least-squares
/// map `A`.
fn ls_spectral_radius(h: &DMatrix<f64>) -> Result<f64> {
    let gram = SymMatrix::new(h.transpose() * h)?;
    let inv = robust_inverse(&gram, 0.0).map_err(|_| Error::NotIdentifiable)?;
    Ok(inv.max_eigenvalue())
}

/// `z = θ̂_LS + d`, `d` i.i.d. Laplace with `b = √(λ_max(AᵀA)/s)`.
pub fn calibrate_laplace_output_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
) -> Result<Mechanism> {
    output_perturbation(model, s, MechanismKind::LaplaceOutput, |lam, sv, n| {
        NoiseFamily::laplace_iid((lam / sv).sqrt(), n)
    })
}

/// `z = θ̂_LS + d`, `d` i.i.d. cos² with width `2π √(λ_max(AᵀA)/s)`.
pub fn calibrate_cos2_output_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
) -> Result<Mechanism> {
    output_perturbation(model, s, MechanismKind::Cos2Output, |lam, sv, n| {
        let half = PI * (lam / sv).sqrt();
        NoiseFamily::cos2_bounded(-half, half, n)
    })
}

fn output_perturbation(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
    kind: MechanismKind,
    family: impl Fn(f64, f64, usize) -> Result<NoiseFamily<f64>>,
) -> Result<Mechanism> {
    check_budget_dim(s, model.m())?;
    let sv = scalar_budget(s)?;
    let a = least_squares_map(model.h())?;
    let lam = ls_spectral_radius(model.h())?;
    let n = model.n();
    let offset = -(&a * model.noise_mean());
    Mechanism::affine(kind, a, offset, DMatrix::identity(n, n), family(lam, sv, n)?, s.clone())
}

/// Lobe center of the twin multiplicative mechanism.
pub const TWIN_CENTER: f64 = 1.0;

/// Offset policy of the twin multiplicative mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwinOffset {
    /// `z = D y`; the region must be sign-definite and `s` large enough.
    None,
    /// `z = D (y + b)` with `b` moving the region away from zero so that any
    /// `s > 0` can be met.
    Auto,
}

/// Twin multiplicative mechanism with `sup_{y ∈ region} I_z(y) = s · I`.
///
/// The lobe half width `δ` is found by bisection on the scale-family Fisher
/// information `J(δ)`, which decreases in `δ`.
pub fn calibrate_twin_uniform_multiplicative(
    model: &MeasurementModel,
    s: &PsdMatrix<f64>,
    low: &DVector<f64>,
    high: &DVector<f64>,
    policy: TwinOffset,
) -> Result<Mechanism> {
    let m = model.m();
    check_budget_dim(s, m)?;
    let sv = scalar_budget(s)?;
    if low.len() != m || high.len() != m {
        return Err(Error::DimensionMismatch {
            context: "twin region",
            expected: m,
            actual: low.len(),
        });
    }
    if low.iter().zip(high.iter()).any(|(l, h)| !(h >= l)) {
        return Err(Error::InvalidInput("twin region needs high >= low".into()));
    }
    let c = TWIN_CENTER;
    let (offset, q) = match policy {
        TwinOffset::None => {
            let mut q = f64::INFINITY;
            for (l, h) in low.iter().zip(high.iter()) {
                if *l <= 0.0 && *h >= 0.0 {
                    return Err(Error::CalibrationInfeasible(
                        "region contains y = 0 where the multiplicative Fisher information is unbounded".into(),
                    ));
                }
                q = q.min(l.abs().min(h.abs()));
            }
            (DVector::zeros(m), q)
        }
        TwinOffset::Auto => {
            let width = low
                .iter()
                .zip(high.iter())
                .map(|(l, h)| h - l)
                .fold(0.0, f64::max);
            let q = width.max((twin_scale_fisher(c, 0.25 * c) / sv).sqrt());
            (low.map(|l| q - l), q)
        }
    };
    let target = sv * q * q;
    let j_min = twin_scale_fisher(c, c);
    if !(target > j_min) {
        return Err(Error::CalibrationInfeasible(format!(
            "budget s = {sv} is below the smallest achievable sup {:.6}",
            j_min / (q * q)
        )));
    }
    // J(δ) decreases in δ; find J(δ) = target.
    let (mut lo, mut hi) = (0.0f64, c);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if twin_scale_fisher(c, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * c {
            break;
        }
    }
    // the upper end keeps J(δ) ≤ target
    let delta = hi;
    let noise = NoiseFamily::twin_uniform(c, delta, m)?;
    Ok(Mechanism {
        kind: MechanismKind::TwinUniformMult,
        sampler: NoiseSampler::new(&noise),
        class: MechanismClass::Multiplicative { offset, noise },
        certified_bound: s.clone(),
        scope: Scope::Region {
            low: low.clone(),
            high: high.clone(),
        },
        whitened_a: None,
    })
}

/// The planted inadmissible mechanism `z = y + (1 + y²) d`, `d ~ N(0, v)`.
/// Its certified bound is the global sup of its Fisher information.
pub fn planted_fold_mechanism(m: usize, variance: f64) -> Result<Mechanism> {
    if !(variance > 0.0) || m == 0 {
        return Err(Error::InvalidInput("fold mechanism needs variance > 0, m >= 1".into()));
    }
    // sup over t = y² ≥ 0 of (1/v + 8t)/(1+t)²
    let t_star = (1.0 - 1.0 / (4.0 * variance)).max(0.0);
    let sup = fold_fisher(t_star.sqrt(), variance).max(fold_fisher(0.0, variance));
    let noise = NoiseFamily::gaussian_iid(variance.sqrt(), m)?;
    Ok(Mechanism {
        kind: MechanismKind::FoldInadmissible,
        sampler: NoiseSampler::new(&noise),
        class: MechanismClass::Fold { variance },
        certified_bound: PsdMatrix::scaled_identity(m, sup),
        scope: Scope::Global,
        whitened_a: None,
    })
}
