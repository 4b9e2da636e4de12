use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::distributed::{network_setup, resolve_graph};
use super::spec::{ExperimentSpec, Scenario, Sweep, DEFAULT_MECHANISMS};
use super::sweep::{draw_h, three_sigma_region, Pair};
use crate::bounds::identifiable_under_privacy;
use crate::fisher::audit::{admissibility_cross_term, empirical_score_mean};
use crate::mechanisms::{
    calibrate_twin_uniform_multiplicative, gaussian_optimal_mechanism, planted_fold_mechanism, MeasurementModel,
    Mechanism, MechanismKind, TwinOffset,
};
use crate::psdlinalg::PsdMatrix;
use crate::{Error, Result};

/// Audit threshold in standard errors.
const AUDIT_Z: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub criterion: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
    pub events: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    /// Whether some identifiability criterion failed.
    pub fn identifiability_failed(&self) -> bool {
        self.items.iter().any(|i| !i.passed && i.criterion.starts_with("identifiability"))
    }
}

fn audit(
    label: &str,
    mech: &Mechanism,
    model: &MeasurementModel,
    theta: &DVector<f64>,
    samples: usize,
    seed: u64,
    items: &mut Vec<CheckItem>,
) -> Result<()> {
    let cross = admissibility_cross_term(mech, model, theta, samples, seed)?;
    items.push(CheckItem {
        criterion: format!("admissibility cross term: {label}"),
        passed: cross.within(AUDIT_Z),
        detail: format!("max |mean/stderr| = {:.3} over {samples} samples", cross.max_abs_z()),
    });
    let score = empirical_score_mean(model, mech, theta, samples, seed ^ 1)?;
    items.push(CheckItem {
        criterion: format!("zero score mean: {label}"),
        passed: score.within(AUDIT_Z),
        detail: format!("max |mean/stderr| = {:.3} over {samples} samples", score.max_abs_z()),
    });
    Ok(())
}

fn audited_mechanism(kind: MechanismKind, model: &MeasurementModel, s: f64, theta: &DVector<f64>) -> Result<Mechanism> {
    match kind {
        MechanismKind::FoldInadmissible => planted_fold_mechanism(model.m(), 1.0),
        MechanismKind::TwinUniformMult => {
            let (low, high) = three_sigma_region(model, theta)?;
            let budget = PsdMatrix::scaled_identity(model.m(), s);
            calibrate_twin_uniform_multiplicative(model, &budget, &low, &high, TwinOffset::Auto)
        }
        _ => Ok(Pair::build(kind, model, s, theta)?.mechanism().clone()),
    }
}

/// Identifiability and admissibility audit of a scenario.
///
/// Sweeps audit every listed mechanism at the median grid budget; network
/// scenarios check joint identifiability of the realized draw and audit the
/// Gaussian release of every sensor plus any listed mechanism on sensor 0;
/// consensus checks the graph and budgets.
pub fn check_scenario(spec: &ExperimentSpec) -> Result<CheckReport> {
    spec.validate()?;
    let samples = spec.audit_samples.unwrap_or(100_000);
    let mut items = Vec::new();
    let mut events = Vec::new();
    match spec.scenario {
        Scenario::MechSweep => {
            let h = match draw_h(spec, 10, &mut events, |h| identifiable_under_privacy(h, &PsdMatrix::identity(h.nrows()))) {
                Ok(h) => h,
                Err(Error::NotIdentifiable) => {
                    items.push(CheckItem {
                        criterion: "identifiability: rank of HᵀSH".into(),
                        passed: false,
                        detail: "HᵀH is singular, so HᵀSH is singular for every s".into(),
                    });
                    return Ok(CheckReport { items, events });
                }
                Err(e) => return Err(e),
            };
            let grid = spec.sweep.clone().unwrap_or(Sweep::Values(vec![1.0])).values()?;
            for &s in &grid {
                let ok = identifiable_under_privacy(&h, &PsdMatrix::scaled_identity(h.nrows(), s))?;
                if !ok {
                    items.push(CheckItem {
                        criterion: format!("identifiability: rank of HᵀSH at s = {s}"),
                        passed: false,
                        detail: "singular".into(),
                    });
                }
            }
            items.push(CheckItem {
                criterion: "identifiability: rank of HᵀSH".into(),
                passed: items.is_empty(),
                detail: format!("{} budget(s) checked", grid.len()),
            });
            let s_mid = grid[grid.len() / 2];
            let model = MeasurementModel::gaussian_iid(h, spec.sigma_w)?;
            let theta = DVector::from_column_slice(&spec.theta);
            let kinds = spec.mechanisms.clone().unwrap_or_else(|| DEFAULT_MECHANISMS.to_vec());
            for (i, kind) in kinds.iter().enumerate() {
                let mech = audited_mechanism(*kind, &model, s_mid, &theta)?;
                audit(kind.label(), &mech, &model, &theta, samples, spec.seed.wrapping_add(i as u64), &mut items)?;
            }
        }
        Scenario::Offline | Scenario::Online => {
            let setup = network_setup(spec, &mut events)?;
            items.push(CheckItem {
                criterion: "identifiability: joint rank of Σ_i H_iᵀ S_i H_i".into(),
                passed: setup.identifiable,
                detail: format!("{} sensors", setup.blocks.len()),
            });
            let theta = &setup.theta;
            for (i, b) in setup.blocks.iter().enumerate() {
                let model = MeasurementModel::new(b.h.clone(), crate::fisher::NoiseFamily::gaussian(DVector::zeros(b.m()), b.noise_cov.clone())?)?;
                let mech = gaussian_optimal_mechanism(&model, &b.s)?;
                audit(&format!("gaussian release of sensor {i}"), &mech, &model, theta, samples, spec.seed.wrapping_add(i as u64), &mut items)?;
                if i == 0 {
                    for (j, kind) in spec.mechanisms.iter().flatten().enumerate() {
                        let s = b.s.as_matrix()[(0, 0)];
                        let mech = audited_mechanism(*kind, &model, s, theta)?;
                        audit(kind.label(), &mech, &model, theta, samples, spec.seed.wrapping_add(1000 + j as u64), &mut items)?;
                    }
                }
            }
        }
        Scenario::Consensus => {
            let network = resolve_graph(spec)?;
            items.push(CheckItem {
                criterion: "connectivity".into(),
                passed: true,
                detail: format!("{} agents, Metropolis weights", network.n_sensors()),
            });
            let n = network.n_sensors();
            let ok = spec.budgets.as_ref().is_none_or(|b| b.len() == n);
            items.push(CheckItem {
                criterion: "budgets".into(),
                passed: ok,
                detail: format!("need {n} positive budgets"),
            });
        }
    }
    Ok(CheckReport { items, events })
}
