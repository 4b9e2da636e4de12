//! Scalar densities in `f64`: pdf, score, Fisher integrand and samplers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp1, StandardNormal};

use super::NoiseFamily;
use crate::psdlinalg::{psd_sqrt, robust_inverse};
use crate::{Error, Result};

/// One-dimensional density of an i.i.d. noise component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarDensity {
    Gaussian { mean: f64, sd: f64 },
    Laplace { b: f64 },
    Cauchy { gamma: f64 },
    Cos2 { lower: f64, upper: f64 },
    /// Raised-cosine lobes on `[c - δ, c + δ]` and its mirror, mass ½ each.
    TwinLobes { center: f64, delta: f64 },
}

/// Tolerance of the cos² inverse-CDF bisection.
pub const COS2_BISECTION_TOL: f64 = 1e-12;

impl ScalarDensity {
    /// Marginal density of one component of an i.i.d. family.
    pub fn from_family(f: &NoiseFamily<f64>) -> Result<Self> {
        match *f {
            NoiseFamily::LaplaceIid { scale, .. } => Ok(Self::Laplace { b: scale }),
            NoiseFamily::CauchyIid { scale, .. } => Ok(Self::Cauchy { gamma: scale }),
            NoiseFamily::Cos2Bounded { lower, upper, .. } => Ok(Self::Cos2 { lower, upper }),
            NoiseFamily::TwinUniform {
                center, half_width, ..
            } => Ok(Self::TwinLobes {
                center,
                delta: half_width,
            }),
            NoiseFamily::Gaussian { .. } => Err(Error::Unsupported(
                "multivariate gaussian has no scalar marginal form here".into(),
            )),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => {
                let u = (x - mean) / sd;
                (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
            }
            Self::Laplace { b } => (-x.abs() / b).exp() / (2.0 * b),
            Self::Cauchy { gamma } => gamma / (PI * (gamma * gamma + x * x)),
            Self::Cos2 { lower, upper } => {
                if x < lower || x > upper {
                    return 0.0;
                }
                let l = upper - lower;
                let c = (PI * (x - 0.5 * (lower + upper)) / l).cos();
                2.0 / l * c * c
            }
            Self::TwinLobes { center, delta } => {
                let u = x.abs() - center;
                if u.abs() > delta {
                    return 0.0;
                }
                let c = (PI * u / (2.0 * delta)).cos();
                0.5 / delta * c * c
            }
        }
    }

    /// `d/dx ln f(x)` on the interior of the support.
    pub fn score(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => -(x - mean) / (sd * sd),
            Self::Laplace { b } => {
                if x > 0.0 {
                    -1.0 / b
                } else if x < 0.0 {
                    1.0 / b
                } else {
                    0.0
                }
            }
            Self::Cauchy { gamma } => -2.0 * x / (gamma * gamma + x * x),
            Self::Cos2 { lower, upper } => {
                let l = upper - lower;
                -(2.0 * PI / l) * (PI * (x - 0.5 * (lower + upper)) / l).tan()
            }
            Self::TwinLobes { center, delta } => {
                let s = x.signum();
                let u = x.abs() - center;
                -s * (PI / delta) * (PI * u / (2.0 * delta)).tan()
            }
        }
    }

    /// `f'(x)² / f(x)`, written so it stays finite where `f` vanishes.
    pub fn fisher_integrand(&self, x: f64) -> f64 {
        match *self {
            Self::Cos2 { lower, upper } => {
                if x < lower || x > upper {
                    return 0.0;
                }
                let l = upper - lower;
                let s = (PI * (x - 0.5 * (lower + upper)) / l).sin();
                2.0 / l * (2.0 * PI / l).powi(2) * s * s
            }
            Self::TwinLobes { center, delta } => {
                let u = x.abs() - center;
                if u.abs() > delta {
                    return 0.0;
                }
                let s = (PI * u / (2.0 * delta)).sin();
                0.5 / delta * (PI / delta).powi(2) * s * s
            }
            _ => {
                let p = self.pdf(x);
                if p == 0.0 {
                    0.0
                } else {
                    let sc = self.score(x);
                    sc * sc * p
                }
            }
        }
    }

    /// Integrand of the scale-family Fisher information `(1 + x ψ(x))² f(x)`.
    pub fn scale_fisher_integrand(&self, x: f64) -> f64 {
        match *self {
            Self::TwinLobes { center, delta } => {
                let u = x.abs() - center;
                if u.abs() > delta {
                    return 0.0;
                }
                let a = PI * u / (2.0 * delta);
                let (s, c) = a.sin_cos();
                let f = 0.5 / delta * c * c;
                // x ψ f and x² ψ² f with the tan factor cancelled
                let xpsi_f = -x.abs() * (PI / delta) * 0.5 / delta * s * c;
                let x2psi2_f = x * x * 0.5 / delta * (PI / delta).powi(2) * s * s;
                f + 2.0 * xpsi_f + x2psi2_f
            }
            _ => {
                let p = self.pdf(x);
                if p == 0.0 {
                    0.0
                } else {
                    let t = 1.0 + x * self.score(x);
                    t * t * p
                }
            }
        }
    }

    /// Support as a list of intervals on which the density is smooth.
    pub fn pieces(&self) -> Vec<(f64, f64)> {
        match *self {
            Self::Gaussian { mean, .. } => vec![(f64::NEG_INFINITY, mean), (mean, f64::INFINITY)],
            Self::Laplace { .. } | Self::Cauchy { .. } => {
                vec![(f64::NEG_INFINITY, 0.0), (0.0, f64::INFINITY)]
            }
            Self::Cos2 { lower, upper } => vec![(lower, upper)],
            Self::TwinLobes { center, delta } => vec![
                (-center - delta, -center + delta),
                (center - delta, center + delta),
            ],
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Self::Cos2 { .. } | Self::TwinLobes { .. })
    }

    /// Analytic CDF where one is needed (cos² family).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Cos2 { lower, upper } => cos2_cdf(lower, upper, x),
            Self::Laplace { b } => {
                if x < 0.0 {
                    0.5 * (x / b).exp()
                } else {
                    1.0 - 0.5 * (-x / b).exp()
                }
            }
            Self::Cauchy { gamma } => 0.5 + (x / gamma).atan() / PI,
            Self::Gaussian { mean, sd } => 0.5 * libm::erfc(-(x - mean) / (sd * 2f64.sqrt())),
            Self::TwinLobes { center, delta } => {
                let lobe = |c: f64| cos2_cdf(c - delta, c + delta, x);
                0.5 * lobe(-center) + 0.5 * lobe(center)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => {
                let n: f64 = StandardNormal.sample(rng);
                mean + sd * n
            }
            Self::Laplace { b } => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    b * e
                } else {
                    -b * e
                }
            }
            Self::Cauchy { gamma } => Cauchy::new(0.0, gamma)
                .expect("validated scale")
                .sample(rng),
            Self::Cos2 { lower, upper } => sample_cos2(lower, upper, rng),
            Self::TwinLobes { center, delta } => {
                let v = sample_cos2(-delta, delta, rng);
                if rng.random::<bool>() {
                    center + v
                } else {
                    -center + v
                }
            }
        }
    }
}

/// Vector sampler for a [`NoiseFamily`], with the covariance root and
/// precision of Gaussian families computed once.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gaussian {
        mean: DVector<f64>,
        root: DMatrix<f64>,
        precision: Option<DMatrix<f64>>,
    },
    Iid {
        density: ScalarDensity,
        dim: usize,
    },
}

impl NoiseSampler {
    pub fn new(f: &NoiseFamily<f64>) -> Self {
        let kind = match f {
            NoiseFamily::Gaussian { mean, cov } => SamplerKind::Gaussian {
                mean: mean.clone(),
                root: psd_sqrt(cov).into_matrix(),
                precision: robust_inverse(cov.as_sym(), 0.0).ok().map(|p| p.into_matrix()),
            },
            other => SamplerKind::Iid {
                density: ScalarDensity::from_family(other).expect("non-gaussian families are i.i.d."),
                dim: other.dim(),
            },
        };
        Self { kind }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SamplerKind::Gaussian { mean, .. } => mean.len(),
            SamplerKind::Iid { dim, .. } => *dim,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.kind {
            SamplerKind::Gaussian { mean, root, .. } => {
                let e = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
                mean + root * e
            }
            SamplerKind::Iid { density, dim } => DVector::from_fn(*dim, |_, _| density.sample(rng)),
        }
    }

    /// `∇ ln f(d)`.
    pub fn grad_log_density(&self, d: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            SamplerKind::Gaussian {
                mean, precision, ..
            } => match precision {
                Some(p) => Ok(-(p * (d - mean))),
                None => Err(Error::Unsupported(
                    "score of a degenerate gaussian is undefined".into(),
                )),
            },
            SamplerKind::Iid { density, .. } => Ok(d.map(|x| density.score(x))),
        }
    }

    pub fn scalar_density(&self) -> Option<ScalarDensity> {
        match &self.kind {
            SamplerKind::Iid { density, .. } => Some(*density),
            SamplerKind::Gaussian { .. } => None,
        }
    }
}

fn cos2_cdf(lower: f64, upper: f64, x: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    if x >= upper {
        return 1.0;
    }
    let l = upper - lower;
    let u = x - 0.5 * (lower + upper);
    ((u + 0.5 * l) / l + (2.0 * PI * u / l).sin() / (2.0 * PI)).clamp(0.0, 1.0)
}

/// Inverse-CDF draw from the cos² density by bisection.
pub fn sample_cos2<R: Rng + ?Sized>(lower: f64, upper: f64, rng: &mut R) -> f64 {
    let p: f64 = rng.random();
    cos2_quantile(lower, upper, p)
}

pub fn cos2_quantile(lower: f64, upper: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (lower, upper);
    let tol = COS2_BISECTION_TOL * (upper - lower).max(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if cos2_cdf(lower, upper, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::quadrature::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<ScalarDensity> {
        vec![
            ScalarDensity::Gaussian { mean: 0.3, sd: 0.7 },
            ScalarDensity::Laplace { b: 1.5 },
            ScalarDensity::Cauchy { gamma: 0.8 },
            ScalarDensity::Cos2 { lower: -0.5, upper: 1.5 },
            ScalarDensity::TwinLobes { center: 1.0, delta: 0.4 },
        ]
    }

    #[test]
    fn densities_integrate_to_one() {
        for d in all() {
            let mass: f64 = d.pieces().iter().map(|&(a, b)| integrate(|x| d.pdf(x), a, b, 1e-11)).sum();
            assert!((mass - 1.0).abs() < 1e-8, "{d:?} mass {mass}");
        }
    }

    #[test]
    fn cdf_matches_integrated_pdf() {
        for d in all() {
            let (a, _) = d.pieces()[0];
            let lo = if a.is_finite() { a } else { -40.0 };
            let x = 0.37;
            let num: f64 = if d.is_bounded() {
                d.pieces()
                    .iter()
                    .filter(|(s, _)| *s < x)
                    .map(|&(s, e)| integrate(|t| d.pdf(t), s, e.min(x), 1e-12))
                    .sum()
            } else {
                d.cdf(lo) + integrate(|t| d.pdf(t), lo, 0.0, 1e-12) + integrate(|t| d.pdf(t), 0.0, x, 1e-12)
            };
            assert!((num - d.cdf(x)).abs() < 1e-6, "{d:?}: {num} vs {}", d.cdf(x));
        }
    }

    #[test]
    fn cos2_sampler_ks_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_cos2(-1.0, 1.0, &mut rng)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cos2_cdf(-1.0, 1.0, x);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 0.002, "KS = {ks}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-9, 0.1, 0.5, 0.77, 1.0 - 1e-9] {
            let x = cos2_quantile(-2.0, 3.0, p);
            assert!((cos2_cdf(-2.0, 3.0, x) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn twin_lobe_mean_abs_is_center() {
        let d = ScalarDensity::TwinLobes { center: 1.0, delta: 0.6 };
        let m = integrate(|x| x * d.pdf(x), 0.4, 1.6, 1e-12) * 2.0;
        assert!((m - 1.0).abs() < 1e-10);
    }
}
