//! Private average consensus: each agent perturbs its scalar once, then the
//! network averages.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_sensor_count, MessageKind, MessageLog, SensorNetwork};
use crate::{Error, Real, Result};

/// Unit-information noise `d_i`, scaled by `1/√S_i` so that `I(y_i) = S_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsensusNoise {
    #[default]
    Gaussian,
    /// Laplace with `b = 1`.
    Laplace,
    /// No perturbation; the `S → ∞` limit.
    None,
}

/// `x_{i,0} = y_i + d_i / √S_i`.
pub fn private_initial_states<T: Real, R: Rng + ?Sized>(
    y_init: &[T],
    s_list: &[T],
    noise: ConsensusNoise,
    rng: &mut R,
) -> Result<Vec<T>> {
    if y_init.len() != s_list.len() {
        return Err(Error::DimensionMismatch {
            context: "budgets vs agents",
            expected: y_init.len(),
            actual: s_list.len(),
        });
    }
    if s_list.iter().any(|s| !(*s > T::zero())) {
        return Err(Error::InvalidInput("every budget S_i must be positive".into()));
    }
    Ok(y_init
        .iter()
        .zip(s_list)
        .map(|(&y, &s)| {
            let d: f64 = match noise {
                ConsensusNoise::Gaussian => StandardNormal.sample(rng),
                ConsensusNoise::Laplace => {
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        e
                    } else {
                        -e
                    }
                }
                ConsensusNoise::None => 0.0,
            };
            y + T::lit(d) / s.sqrt()
        })
        .collect())
}

/// Weighted averaging from `x0`; states indexed `[k][i]`, `k = 0..=k_iters`.
pub fn consensus_rounds<T: Real>(
    network: &SensorNetwork<T>,
    x0: Vec<T>,
    k_iters: usize,
    mut log: Option<&mut MessageLog<T>>,
) -> Result<Vec<Vec<T>>> {
    check_sensor_count(network.n_sensors(), x0.len(), "initial states")?;
    let n = x0.len();
    let mut out = Vec::with_capacity(k_iters + 1);
    out.push(x0);
    for k in 0..=k_iters {
        if k > 0 {
            let prev = &out[k - 1];
            let next = (0..n)
                .map(|i| {
                    let mut v = network.weight(i, i) * prev[i];
                    for &j in network.neighbors(i) {
                        v += network.weight(i, j) * prev[j];
                    }
                    v
                })
                .collect();
            out.push(next);
        }
        if let Some(log) = log.as_deref_mut() {
            for (i, v) in out[k].iter().enumerate() {
                log.push(k, i, MessageKind::State, std::iter::once(v));
            }
        }
    }
    Ok(out)
}

/// Gaussian-perturbed private consensus.
pub fn run_private_consensus<T: Real, R: Rng + ?Sized>(
    network: &SensorNetwork<T>,
    y_init: &[T],
    s_list: &[T],
    k_iters: usize,
    rng: &mut R,
) -> Result<Vec<Vec<T>>> {
    run_private_consensus_with(network, y_init, s_list, k_iters, ConsensusNoise::Gaussian, rng, None)
}

pub fn run_private_consensus_with<T: Real, R: Rng + ?Sized>(
    network: &SensorNetwork<T>,
    y_init: &[T],
    s_list: &[T],
    k_iters: usize,
    noise: ConsensusNoise,
    rng: &mut R,
    mut log: Option<&mut MessageLog<T>>,
) -> Result<Vec<Vec<T>>> {
    check_sensor_count(network.n_sensors(), y_init.len(), "agent values")?;
    let x0 = private_initial_states(y_init, s_list, noise, rng)?;
    if let Some(log) = log.as_deref_mut() {
        for (i, v) in x0.iter().enumerate() {
            log.push(0, i, MessageKind::Release, std::iter::once(v));
        }
    }
    consensus_rounds(network, x0, k_iters, log)
}
