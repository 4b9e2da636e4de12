use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ExperimentSpec, MatrixSpec, Scenario, Sweep, DEFAULT_MECHANISMS};
use super::{finish, rep_rng, replicate, RunData, RunResult};
use crate::bounds::{identifiable_under_privacy, ppcr_bound_gaussian};
use crate::estimators::{ConvolvedMle, LeastSquares, OptimalLinear, TwinCentral};
use crate::fisher::NoiseFamily;
use crate::mechanisms::{
    calibrate_cauchy_data_perturbation, calibrate_cos2_mechanism, calibrate_cos2_output_perturbation,
    calibrate_laplace_data_perturbation, calibrate_laplace_output_perturbation,
    calibrate_twin_uniform_multiplicative, gaussian_optimal_mechanism, MeasurementModel, Mechanism, MechanismKind,
    TwinOffset,
};
use crate::psdlinalg::PsdMatrix;
use crate::stats::MeanStderr;
use crate::{Error, Result};

/// One `(mechanism, s)` cell of the sweep. `mse` is absent when the
/// mechanism cannot be calibrated at this `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: MechanismKind,
    pub s: f64,
    pub mse: Option<MeanStderr>,
    pub ppcr_trace: f64,
}

impl SweepRow {
    /// `mse ≥ trace Σ_PPCR − 3·stderr`; gaps and single-rep cells pass.
    pub fn respects_bound(&self) -> bool {
        match &self.mse {
            Some(m) => m.mean >= self.ppcr_trace - 3.0 * m.stderr.unwrap_or(0.0),
            None => true,
        }
    }
}

/// Mechanism with its paired estimator.
pub(crate) enum Pair {
    Optimal(Mechanism, OptimalLinear),
    Mle(Mechanism, ConvolvedMle),
    Ls(Mechanism, LeastSquares),
    Direct(Mechanism),
    Twin(Mechanism, TwinCentral),
}

impl Pair {
    pub(crate) fn build(kind: MechanismKind, model: &MeasurementModel, s: f64, theta: &DVector<f64>) -> Result<Self> {
        let budget = PsdMatrix::scaled_identity(model.m(), s);
        Ok(match kind {
            MechanismKind::GaussianOptimal => Pair::Optimal(
                gaussian_optimal_mechanism(model, &budget)?,
                OptimalLinear::new(model, &budget)?,
            ),
            MechanismKind::LaplaceData => {
                let mech = calibrate_laplace_data_perturbation(model, &budget)?;
                let b = iid_scale(&mech)?;
                Pair::Mle(mech, ConvolvedMle::laplace(model, b)?)
            }
            MechanismKind::CauchyData => {
                let mech = calibrate_cauchy_data_perturbation(model, &budget)?;
                let g = iid_scale(&mech)?;
                Pair::Mle(mech, ConvolvedMle::cauchy(model, g)?)
            }
            MechanismKind::Cos2Data => {
                Pair::Ls(calibrate_cos2_mechanism(model, &budget)?, LeastSquares::new(model.h())?)
            }
            MechanismKind::LaplaceOutput => Pair::Direct(calibrate_laplace_output_perturbation(model, &budget)?),
            MechanismKind::Cos2Output => Pair::Direct(calibrate_cos2_output_perturbation(model, &budget)?),
            MechanismKind::TwinUniformMult => {
                let (low, high) = three_sigma_region(model, theta)?;
                let mech = calibrate_twin_uniform_multiplicative(model, &budget, &low, &high, TwinOffset::Auto)?;
                let est = TwinCentral::new(model, &mech)?;
                Pair::Twin(mech, est)
            }
            MechanismKind::FoldInadmissible | MechanismKind::Custom => {
                return Err(Error::config(
                    "mechanisms",
                    format!("`{}` has no paired estimator", kind.label()),
                ))
            }
        })
    }

    pub(crate) fn mechanism(&self) -> &Mechanism {
        match self {
            Pair::Optimal(m, _) | Pair::Mle(m, _) | Pair::Ls(m, _) | Pair::Direct(m) | Pair::Twin(m, _) => m,
        }
    }

    pub(crate) fn estimate(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(match self {
            Pair::Optimal(_, e) => e.apply(z),
            Pair::Mle(_, e) => e.estimate(z)?.theta_hat,
            Pair::Ls(_, e) => e.apply(z),
            Pair::Direct(_) => z.clone(),
            Pair::Twin(_, e) => e.estimate(z)?.theta_hat,
        })
    }
}

fn iid_scale(mech: &Mechanism) -> Result<f64> {
    match mech.noise_family() {
        Some(NoiseFamily::LaplaceIid { scale, .. } | NoiseFamily::CauchyIid { scale, .. }) => Ok(*scale),
        _ => Err(Error::Unsupported("expected an i.i.d. Laplace or Cauchy mechanism".into())),
    }
}

/// `H θ ± 3σ` componentwise, the region on which the twin mechanism is
/// calibrated.
pub(crate) fn three_sigma_region(model: &MeasurementModel, theta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let cov = model
        .gaussian_cov()
        .ok_or_else(|| Error::Unsupported("twin region needs gaussian measurement noise".into()))?;
    let center = model.h() * theta;
    let sd = DVector::from_fn(center.len(), |j, _| cov.as_matrix()[(j, j)].sqrt());
    Ok((&center - &sd * 3.0, &center + &sd * 3.0))
}

/// Draws `H`, re-drawing with an incremented seed while `HᵀH` is singular.
pub(crate) fn draw_h(
    spec: &ExperimentSpec,
    default_rows: usize,
    events: &mut Vec<String>,
    ok: impl Fn(&DMatrix<f64>) -> Result<bool>,
) -> Result<DMatrix<f64>> {
    let n = spec.theta.len();
    let h_spec = spec
        .h
        .clone()
        .unwrap_or_else(|| MatrixSpec::uniform(-1.0, 1.0, default_rows, n, None));
    for attempt in 0..64u64 {
        let h = h_spec.realize(spec.seed, attempt)?;
        if ok(&h)? {
            return Ok(h);
        }
        if !h_spec.is_random() {
            return Err(Error::NotIdentifiable);
        }
        events.push(format!(
            "H draw {attempt} not identifiable; re-drawn with seed offset {}",
            attempt + 1
        ));
    }
    Err(Error::NotIdentifiable)
}

/// The single-system sweep: for every `s` in the grid and every listed
/// mechanism, the Monte Carlo MSE of its paired estimator next to
/// `trace Σ_PPCR(s)`. `H` is drawn once (default `U[-1,1]^{10×n}`) and
/// frozen across the sweep; the default grid is `0.1:0.1:10`.
pub fn run_mech_sweep(spec: &ExperimentSpec) -> Result<RunResult> {
    if spec.scenario != Scenario::MechSweep {
        return Err(Error::config("scenario", "expected mech_sweep"));
    }
    spec.validate()?;
    let mut events = Vec::new();
    let h = draw_h(spec, 10, &mut events, |h| {
        identifiable_under_privacy(h, &PsdMatrix::identity(h.nrows()))
    })?;
    let model = MeasurementModel::gaussian_iid(h.clone(), spec.sigma_w)?;
    let theta = DVector::from_column_slice(&spec.theta);
    let grid = spec
        .sweep
        .clone()
        .unwrap_or(Sweep::Linear {
            start: 0.1,
            step: 0.1,
            stop: 10.0,
        })
        .values()?;
    let kinds: Vec<MechanismKind> = spec.mechanisms.clone().unwrap_or_else(|| DEFAULT_MECHANISMS.to_vec());
    let noise_cov = PsdMatrix::scaled_identity(model.m(), spec.sigma_w * spec.sigma_w);
    let mut rows = Vec::with_capacity(grid.len() * kinds.len());
    for (si, &s) in grid.iter().enumerate() {
        let bound = ppcr_bound_gaussian(&h, &PsdMatrix::scaled_identity(model.m(), s), &noise_cov)?
            .trace()
            .ok_or(Error::NotIdentifiable)?;
        for (ki, &kind) in kinds.iter().enumerate() {
            let pair = match Pair::build(kind, &model, s, &theta) {
                Ok(p) => p,
                Err(Error::CalibrationInfeasible(msg)) => {
                    events.push(format!("{} at s = {s}: {msg}", kind.label()));
                    rows.push(SweepRow {
                        mechanism: kind,
                        s,
                        mse: None,
                        ppcr_trace: bound,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let condition = ((si as u64) << 8) | ki as u64;
            let acc = replicate(spec.reps, 1, |rep, acc| {
                let mut rng = rep_rng(spec.seed, condition, rep);
                let err = one_rep(&model, &pair, &theta, &mut rng)?;
                acc.slots[0].push(err);
                Ok(())
            })?;
            rows.push(SweepRow {
                mechanism: kind,
                s,
                mse: acc.summary(0),
                ppcr_trace: bound,
            });
        }
    }
    Ok(finish(spec, events, RunData::MechSweep(rows)))
}

fn one_rep<R: Rng + ?Sized>(model: &MeasurementModel, pair: &Pair, theta: &DVector<f64>, rng: &mut R) -> Result<f64> {
    let y = model.sample_y(theta, rng);
    let z = pair.mechanism().sample(&y, rng);
    Ok((pair.estimate(&z)? - theta).norm_squared())
}
