//! Monte Carlo audits of mechanism scores.
//!
//! `empirical_score_mean` estimates `E[∂ ln p(z|y)/∂y]`, which must vanish for
//! any regular mechanism. `admissibility_cross_term` estimates
//! `E[(∂ ln p(z|d,θ)/∂θ)(∂ ln p(z|w,θ)/∂θ)ᵀ]`, which vanishes exactly for the
//! admissible classes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mechanisms::{MeasurementModel, Mechanism, MechanismClass};
use crate::stats::CompensatedSum;
use crate::{Error, Result};

/// Monte Carlo mean with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEstimate {
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub n_samples: usize,
}

impl AuditEstimate {
    fn from_samples(rows: usize, cols: usize, n: usize, mut next: impl FnMut() -> Result<DMatrix<f64>>) -> Result<Self> {
        let mut sum = vec![CompensatedSum::new(); rows * cols];
        let mut sq = vec![CompensatedSum::new(); rows * cols];
        for _ in 0..n {
            let x = next()?;
            for (k, v) in x.iter().enumerate() {
                sum[k].add(*v);
                sq[k].add(v * v);
            }
        }
        let nf = n as f64;
        let mean = DMatrix::from_iterator(rows, cols, sum.iter().map(|s| s.value() / nf));
        let stderr = DMatrix::from_iterator(
            rows,
            cols,
            sum.iter().zip(&sq).map(|(s, q)| {
                let m = s.value() / nf;
                let var = ((q.value() - nf * m * m) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            }),
        );
        Ok(Self {
            mean,
            stderr,
            n_samples: n,
        })
    }

    /// Largest `|mean| / stderr` over entries; exact zeros count as 0.
    pub fn max_abs_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.stderr.iter())
            .map(|(m, s)| {
                if *m == 0.0 {
                    0.0
                } else if *s == 0.0 {
                    f64::INFINITY
                } else {
                    m.abs() / s
                }
            })
            .fold(0.0, f64::max)
    }

    /// Every entry within `k` standard errors of zero.
    pub fn within(&self, k: f64) -> bool {
        self.max_abs_z() <= k
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput("audits need at least two samples".into()));
    }
    Ok(())
}

fn check_theta(model: &MeasurementModel, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != model.n() {
        return Err(Error::DimensionMismatch {
            context: "theta",
            expected: model.n(),
            actual: theta.len(),
        });
    }
    Ok(())
}

/// Monte Carlo estimate of `E[∂ ln p(z|y)/∂y]` with `y = Hθ + w`.
pub fn empirical_score_mean(
    model: &MeasurementModel,
    mech: &Mechanism,
    theta: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<AuditEstimate> {
    check_samples(n_samples)?;
    check_theta(model, theta)?;
    mech.check_input_dim(model.m())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.m();
    AuditEstimate::from_samples(m, 1, n_samples, || {
        let y = model.sample_y(theta, &mut rng);
        let (_, d) = mech.sample_with_noise(&y, &mut rng);
        let s = mech.score_wrt_y(&y, &d)?;
        Ok(DMatrix::from_column_slice(m, 1, s.as_slice()))
    })
}

/// Monte Carlo estimate of the cross term `E[s_d s_wᵀ]` that admissible
/// mechanisms drive to zero.
/// Requires Gaussian measurement noise.
pub fn admissibility_cross_term(
    mech: &Mechanism,
    model: &MeasurementModel,
    theta: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<AuditEstimate> {
    check_samples(n_samples)?;
    check_theta(model, theta)?;
    mech.check_input_dim(model.m())?;
    let cov = model
        .gaussian_cov()
        .ok_or_else(|| Error::Unsupported("cross-term audit needs gaussian measurement noise".into()))?;
    let sigma = cov.as_matrix();
    let mu = model.noise_mean();
    let h = model.h();
    let n = model.n();

    // Score of p(z | d, θ) as a function of the realized (w, d, y).
    let noise_score: Box<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>> =
        match &mech.class {
            MechanismClass::Affine { a, .. } => {
                // z | d ~ N(A H θ + const, A Σ Aᵀ)
                let acov = a * sigma * a.transpose();
                let pinv = acov
                    .clone()
                    .pseudo_inverse(1e-12 * acov.amax().max(f64::MIN_POSITIVE))
                    .map_err(|e| Error::Singular(e.to_string()))?;
                let g = (a * h).transpose() * pinv * a;
                Box::new(move |w, _, _| &g * (w - &mu))
            }
            MechanismClass::Multiplicative { .. } => {
                // z | D ~ N(D(Hθ + b), DΣD): the D factors cancel
                let prec = crate::psdlinalg::robust_inverse(cov.as_sym(), 0.0)?.into_matrix();
                let g = h.transpose() * prec;
                Box::new(move |w, _, _| &g * (w - &mu))
            }
            MechanismClass::Fold { .. } => {
                let sd: Vec<f64> = diagonal_sd(sigma)?;
                let ht = h.transpose();
                Box::new(move |w, d, y| {
                    let comp = DVector::from_fn(y.len(), |j, _| {
                        let mean_j = y[j] - (w[j] - mu[j]);
                        let z = y[j] + (1.0 + y[j] * y[j]) * d[j];
                        fold_score_given_d(z, d[j], mean_j, sd[j])
                    });
                    &ht * comp
                })
            }
        };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AuditEstimate::from_samples(n, n, n_samples, || {
        let w = model.sample_w(&mut rng);
        let y = h * theta + &w;
        let (_, d) = mech.sample_with_noise(&y, &mut rng);
        let s_d = noise_score(&w, &d, &y);
        let s_w = h.transpose() * mech.score_wrt_y(&y, &d)?;
        Ok(s_d * s_w.transpose())
    })
}

fn diagonal_sd(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && sigma[(i, j)] != 0.0 {
                return Err(Error::Unsupported(
                    "fold audit needs diagonal measurement covariance".into(),
                ));
            }
        }
    }
    Ok((0..n).map(|i| sigma[(i, i)].sqrt()).collect())
}

/// `∂/∂μ ln p(z | d)` for `z = y + (1 + y²) d`, `y ~ N(μ, σ²)`.
///
/// Given `d`, `z` has the two preimages solving `d y² + y + (d - z) = 0`, each
/// weighted by `φ((y - μ)/σ) / |1 + 2 y d|`.
fn fold_score_given_d(z: f64, d: f64, mu: f64, sd: f64) -> f64 {
    let var = sd * sd;
    if d == 0.0 {
        return (z - mu) / var;
    }
    let disc = (1.0 + 4.0 * d * (z - d)).max(0.0);
    let r1 = 2.0 * (z - d) / (1.0 + disc.sqrt());
    let r2 = -1.0 / d - r1;
    let logw = |r: f64| -0.5 * (r - mu) * (r - mu) / var - (1.0 + 2.0 * r * d).abs().ln();
    let (l1, l2) = (logw(r1), logw(r2));
    let top = l1.max(l2);
    let (w1, w2) = ((l1 - top).exp(), (l2 - top).exp());
    (w1 * (r1 - mu) + w2 * (r2 - mu)) / ((w1 + w2) * var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::*;
    use crate::psdlinalg::PsdMatrix;

    const N: usize = 100_000;

    fn model() -> MeasurementModel {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.0, 0.8, 0.2]);
        MeasurementModel::gaussian_iid(h, 0.2).unwrap()
    }

    fn admissible() -> Vec<Mechanism> {
        let m = model();
        let s = PsdMatrix::scaled_identity(3, 2.0);
        let low = DVector::from_element(3, -3.0);
        let high = DVector::from_element(3, 3.0);
        vec![
            gaussian_optimal_mechanism(&m, &s).unwrap(),
            calibrate_laplace_data_perturbation(&m, &s).unwrap(),
            calibrate_cauchy_data_perturbation(&m, &s).unwrap(),
            calibrate_cos2_mechanism(&m, &s).unwrap(),
            calibrate_laplace_output_perturbation(&m, &s).unwrap(),
            calibrate_cos2_output_perturbation(&m, &s).unwrap(),
            calibrate_twin_uniform_multiplicative(&m, &s, &low, &high, TwinOffset::Auto).unwrap(),
        ]
    }

    fn theta() -> DVector<f64> {
        DVector::from_vec(vec![0.7, -0.4])
    }

    #[test]
    fn admissible_classes_have_zero_cross_term() {
        for (i, mech) in admissible().iter().enumerate() {
            let est = admissibility_cross_term(mech, &model(), &theta(), N, 100 + i as u64).unwrap();
            assert!(est.within(5.0), "{:?}: z = {}", mech.kind, est.max_abs_z());
        }
    }

    #[test]
    fn admissible_classes_have_zero_score_mean() {
        for (i, mech) in admissible().iter().enumerate() {
            let est = empirical_score_mean(&model(), mech, &theta(), N, 200 + i as u64).unwrap();
            assert!(est.within(5.0), "{:?}: z = {}", mech.kind, est.max_abs_z());
        }
    }

    #[test]
    fn fold_mechanism_fails_cross_term() {
        let mech = planted_fold_mechanism(3, 1.0).unwrap();
        let est = admissibility_cross_term(&mech, &model(), &theta(), N, 7).unwrap();
        assert!(!est.within(5.0), "z = {}", est.max_abs_z());
    }

    #[test]
    fn fold_score_matches_finite_difference() {
        let (z, d, sd) = (0.9f64, 0.3f64, 0.4f64);
        let lik = |mu: f64| {
            let disc = (1.0 + 4.0 * d * (z - d)).sqrt();
            [(-1.0 + disc) / (2.0 * d), (-1.0 - disc) / (2.0 * d)]
                .iter()
                .map(|r| (-0.5 * ((r - mu) / sd).powi(2)).exp() / (1.0 + 2.0 * r * d).abs())
                .sum::<f64>()
                .ln()
        };
        let h = 1e-6;
        let fd = (lik(0.2 + h) - lik(0.2 - h)) / (2.0 * h);
        assert!((fold_score_given_d(z, d, 0.2, sd) - fd).abs() < 1e-6);
    }

    #[test]
    fn audits_reject_bad_input() {
        let mech = &admissible()[0];
        assert!(admissibility_cross_term(mech, &model(), &theta(), 1, 0).is_err());
        assert!(empirical_score_mean(&model(), mech, &DVector::zeros(3), 10, 0).is_err());
    }
}
