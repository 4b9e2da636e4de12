use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spec::{ExperimentSpec, InitSpec, MatrixSpec, Scenario, DEFAULT_SCHEMES};
use super::sweep::draw_h;
use super::{finish, rep_rng, replicate, RunData, RunResult};
use crate::bounds::{joint_identifiable, pp_fisher_additive, SensorBlock};
use crate::network::{metropolis_weights, OfflinePlan, OnlinePlan, PrivacyScheme, SensorNetwork};
use crate::psdlinalg::{robust_inverse, PsdMatrix, SymMatrix};
use crate::stats::MeanStderr;
use crate::{Error, Result};

/// One `(k, sensor)` point; `sensor = None` is the sensor average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajRow {
    pub k: usize,
    pub sensor: Option<usize>,
    /// Absent while some sensor has no estimate yet.
    pub mse: Option<MeanStderr>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: PrivacyScheme,
    pub rows: Vec<TrajRow>,
    /// Offline only: MSE of the fused estimate every sensor converges to.
    pub central: Option<MeanStderr>,
    /// Offline only: largest `max_i ‖θ̂_{i,K} - central‖` over replications.
    pub max_deviation: Option<f64>,
}

impl Trajectory {
    /// Sensor-average row at iteration `k`.
    pub fn average_at(&self, k: usize) -> Option<&TrajRow> {
        self.rows.iter().find(|r| r.k == k && r.sensor.is_none())
    }

    pub fn last_average(&self) -> Option<&TrajRow> {
        self.rows.iter().rev().find(|r| r.sensor.is_none())
    }
}

pub(crate) struct NetworkSetup {
    pub network: SensorNetwork<f64>,
    pub blocks: Vec<SensorBlock<f64>>,
    pub identifiable: bool,
    pub theta: DVector<f64>,
}

pub(crate) fn resolve_graph(spec: &ExperimentSpec) -> Result<SensorNetwork<f64>> {
    let g = spec
        .graph
        .as_ref()
        .ok_or_else(|| Error::config("graph", "required for this scenario"))?
        .resolve()
        .map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("graph", other.to_string()),
        })?;
    metropolis_weights(&g)
}

fn blocks_of(spec: &ExperimentSpec, h: &DMatrix<f64>, n_s: usize) -> Result<Vec<SensorBlock<f64>>> {
    let rps = spec.rows_per_sensor.unwrap_or(1);
    if h.nrows() != n_s * rps {
        return Err(Error::config(
            "h",
            format!("expected {} rows ({} sensors × {} rows), got {}", n_s * rps, n_s, rps, h.nrows()),
        ));
    }
    let s = spec.budget.unwrap_or(1.0);
    let var = spec.sigma_w * spec.sigma_w;
    (0..n_s)
        .map(|i| {
            SensorBlock::new(
                h.rows(i * rps, rps).into_owned(),
                PsdMatrix::scaled_identity(rps, s),
                PsdMatrix::scaled_identity(rps, var),
            )
        })
        .collect()
}

/// Graph, Metropolis weights and per-sensor blocks. A random `H` that is not
/// jointly identifiable is re-drawn; a fixed one is reported as is.
pub(crate) fn network_setup(spec: &ExperimentSpec, events: &mut Vec<String>) -> Result<NetworkSetup> {
    let network = resolve_graph(spec)?;
    let n_s = network.n_sensors();
    let rps = spec.rows_per_sensor.unwrap_or(1);
    let n = spec.theta.len();
    let h_spec = spec
        .h
        .clone()
        .unwrap_or_else(|| MatrixSpec::uniform(-1.0, 1.0, n_s * rps, n, None));
    let probe = ExperimentSpec {
        h: Some(h_spec.clone()),
        ..spec.clone()
    };
    let h = if h_spec.is_random() {
        draw_h(&probe, n_s * rps, events, |h| joint_identifiable(&blocks_of(spec, h, n_s)?))?
    } else {
        h_spec.realize(spec.seed, 0)?
    };
    let blocks = blocks_of(spec, &h, n_s)?;
    let identifiable = joint_identifiable(&blocks)?;
    Ok(NetworkSetup {
        network,
        blocks,
        identifiable,
        theta: DVector::from_column_slice(&spec.theta),
    })
}

/// `trace((Σ_i PI_i)⁻¹)`.
fn fused_bound(blocks: &[SensorBlock<f64>]) -> Result<f64> {
    let total = pp_fisher_additive(blocks)?;
    Ok(robust_inverse(total.as_sym(), 0.0)?.trace())
}

fn check_scenario(spec: &ExperimentSpec, want: Scenario) -> Result<()> {
    if spec.scenario != want {
        return Err(Error::config("scenario", format!("expected {}", want.label())));
    }
    spec.validate()
}

/// Offline runs for each listed scheme (default Gaussian, Laplace data and
/// Laplace output) on shared measurements, `K = iterations` (default 200)
/// consensus rounds. The bound is `trace((Σ_i PI_i)⁻¹)`.
pub fn run_offline_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    check_scenario(spec, Scenario::Offline)?;
    let mut events = Vec::new();
    let setup = network_setup(spec, &mut events)?;
    if !setup.identifiable {
        return Err(Error::NotIdentifiable);
    }
    let k_max = spec.iterations.unwrap_or(200);
    let schemes = spec.algorithms.clone().unwrap_or_else(|| DEFAULT_SCHEMES.to_vec());
    let bound = fused_bound(&setup.blocks)?;
    let plans = schemes
        .iter()
        .map(|&s| OfflinePlan::new(&setup.network, &setup.blocks, s, k_max))
        .collect::<Result<Vec<_>>>()?;
    let n_s = setup.network.n_sensors();
    let width = n_s + 1;
    let per_plan = (k_max + 1) * width + 1;
    let theta = &setup.theta;
    let mut trajectories = Vec::with_capacity(plans.len());
    for (pi, plan) in plans.iter().enumerate() {
        let acc = replicate(spec.reps, per_plan, |rep, acc| {
            // measurements depend only on (seed, rep): every scheme sees the same y
            let mut rng = rep_rng(spec.seed, 0, rep);
            let y: Vec<DVector<f64>> = plan.releases().iter().map(|r| r.measure(theta, &mut rng)).collect();
            let mut noise_rng = rep_rng(spec.seed, 1 + pi as u64, rep);
            let run = plan.run(&y, &mut noise_rng, None)?;
            for (k, ests) in run.estimates.iter().enumerate() {
                let mut total = 0.0;
                let mut complete = true;
                for (i, e) in ests.iter().enumerate() {
                    match e {
                        Some(e) => {
                            let err = (e - theta).norm_squared();
                            acc.slots[k * width + i].push(err);
                            total += err;
                        }
                        None => complete = false,
                    }
                }
                if complete {
                    acc.slots[k * width + n_s].push(total / n_s as f64);
                }
            }
            acc.slots[per_plan - 1].push((&run.central - theta).norm_squared());
            if let Some(d) = run.max_deviation(k_max) {
                acc.max = acc.max.max(d);
            }
            Ok(())
        })?;
        let mut rows = Vec::with_capacity((k_max + 1) * width);
        for k in 0..=k_max {
            for i in 0..width {
                rows.push(TrajRow {
                    k,
                    sensor: (i < n_s).then_some(i),
                    mse: acc.summary(k * width + i),
                    bound,
                });
            }
        }
        trajectories.push(Trajectory {
            algorithm: schemes[pi],
            rows,
            central: acc.summary(per_plan - 1),
            max_deviation: acc.max.is_finite().then_some(acc.max),
        });
    }
    Ok(finish(spec, events, RunData::Offline(trajectories)))
}

/// `{1, 2, 5} × 10^j` up to `k_max`, then ten even steps over the last decade.
pub fn default_checkpoints(k_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 1usize;
    while p <= k_max {
        for m in [1, 2, 5] {
            if m * p <= k_max {
                out.push(m * p);
            }
        }
        p = p.saturating_mul(10);
    }
    let step = (k_max / 10).max(1);
    out.extend((1..=10).map(|j| j * step).filter(|&k| k <= k_max));
    out.push(k_max);
    out.sort_unstable();
    out.dedup();
    out
}

/// Online runs for each listed scheme with `k_max = iterations` (default
/// 10⁴). Rows hold `k · MSE` and its standard error; the bound column is
/// the asymptote `trace((Σ_i PI_i)⁻¹)`.
pub fn run_online_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    check_scenario(spec, Scenario::Online)?;
    let mut events = Vec::new();
    let setup = network_setup(spec, &mut events)?;
    if !setup.identifiable {
        return Err(Error::NotIdentifiable);
    }
    let k_max = spec.iterations.unwrap_or(10_000);
    if k_max == 0 {
        return Err(Error::config("iterations", "must be positive"));
    }
    let checkpoints = spec.checkpoints.clone().unwrap_or_else(|| default_checkpoints(k_max));
    if checkpoints.last().is_some_and(|&c| c > k_max) {
        return Err(Error::config("checkpoints", "must not exceed iterations"));
    }
    let schemes = spec.algorithms.clone().unwrap_or_else(|| DEFAULT_SCHEMES.to_vec());
    let params = spec.online.unwrap_or_default();
    let options = spec.online_options.unwrap_or_default();
    let bound = fused_bound(&setup.blocks)?;
    let n_s = setup.network.n_sensors();
    let n = setup.theta.len();
    let width = n_s + 1;
    let theta = &setup.theta;
    let init = spec.init.clone().unwrap_or(InitSpec::Zero);
    if let InitSpec::Fixed(v) = &init {
        if v.len() != n {
            return Err(Error::config("init", format!("expected {n} entries, got {}", v.len())));
        }
    }
    let mut trajectories = Vec::with_capacity(schemes.len());
    for (pi, &scheme) in schemes.iter().enumerate() {
        let plan = OnlinePlan::new(&setup.network, &setup.blocks, scheme, params, options, k_max)?;
        let central_inv = {
            let total = plan.fused_info_mean() * n_s as f64;
            robust_inverse(&SymMatrix::new(total)?, 0.0)?.into_matrix()
        };
        let acc = replicate(spec.reps, checkpoints.len() * width, |rep, acc| {
            let mut rng = rep_rng(spec.seed, 1 + pi as u64, rep);
            let start = match &init {
                InitSpec::Zero => DVector::zeros(n),
                InitSpec::Fixed(v) => DVector::from_column_slice(v),
                InitSpec::LeastSquares => {
                    let mut sum = DVector::zeros(n);
                    for rel in plan.releases() {
                        let y = rel.measure(theta, &mut rng);
                        sum += &rel.fuse * rel.release(&y, &mut rng);
                    }
                    &central_inv * sum
                }
            };
            let run = plan.run(theta, &start, &checkpoints, &mut rng, None)?;
            for (c, errs) in run.sq_errors.iter().enumerate() {
                let k = checkpoints[c] as f64;
                for (i, e) in errs.iter().enumerate() {
                    acc.slots[c * width + i].push(k * e);
                }
                acc.slots[c * width + n_s].push(k * errs.iter().sum::<f64>() / n_s as f64);
            }
            Ok(())
        })?;
        let mut rows = Vec::with_capacity(checkpoints.len() * width);
        for (c, &k) in checkpoints.iter().enumerate() {
            for i in 0..width {
                rows.push(TrajRow {
                    k,
                    sensor: (i < n_s).then_some(i),
                    mse: acc.summary(c * width + i),
                    bound,
                });
            }
        }
        trajectories.push(Trajectory {
            algorithm: scheme,
            rows,
            central: None,
            max_deviation: None,
        });
    }
    Ok(finish(spec, events, RunData::Online(trajectories)))
}

