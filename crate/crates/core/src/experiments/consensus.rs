use serde::{Deserialize, Serialize};

use super::distributed::resolve_graph;
use super::spec::{ExperimentSpec, Scenario};
use super::{finish, rep_rng, replicate, RunData, RunResult};
use crate::bounds::consensus_mse_bound;
use crate::network::private_initial_states;
use crate::stats::MeanStderr;
use crate::{Error, Result};

/// Running estimate after the first `reps` replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub reps: usize,
    /// Mean of `(1/N) Σ_i (x_{i,K} - ȳ)²` and its standard error.
    pub variance: MeanStderr,
    pub bound: f64,
}

/// Private average consensus: each agent releases `y_i + d_i/√S_i` once and
/// the network runs `K = iterations` (default 200) Metropolis rounds.
/// Budgets default to 1, values to 0, noise to Gaussian. Rows report the
/// running variance at ten evenly spaced replication counts.
pub fn run_consensus_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    if spec.scenario != Scenario::Consensus {
        return Err(Error::config("scenario", "expected consensus"));
    }
    spec.validate()?;
    let network = resolve_graph(spec)?;
    let n = network.n_sensors();
    let budgets = spec.budgets.clone().unwrap_or_else(|| vec![1.0; n]);
    if budgets.len() != n {
        return Err(Error::config("budgets", format!("expected {n} entries, got {}", budgets.len())));
    }
    let values = spec.values.clone().unwrap_or_else(|| vec![0.0; n]);
    if values.len() != n || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("values", format!("expected {n} finite entries")));
    }
    let noise = spec.noise.unwrap_or_default();
    let k = spec.iterations.unwrap_or(200);
    let wk = network.power(k);
    let truth = values.iter().sum::<f64>() / n as f64;
    let bound = consensus_mse_bound(&budgets)?;
    let mut prefixes: Vec<usize> = (1..=10).map(|j| (spec.reps * j / 10).max(1)).collect();
    prefixes.dedup();
    let acc = replicate(spec.reps, prefixes.len(), |rep, acc| {
        let mut rng = rep_rng(spec.seed, 0, rep);
        let x0 = nalgebra::DVector::from_vec(private_initial_states(&values, &budgets, noise, &mut rng)?);
        let xk = &wk * x0;
        let err = xk.iter().map(|x| (x - truth) * (x - truth)).sum::<f64>() / n as f64;
        for (slot, &p) in prefixes.iter().enumerate() {
            if rep < p {
                acc.slots[slot].push(err);
            }
        }
        Ok(())
    })?;
    let rows = prefixes
        .iter()
        .enumerate()
        .map(|(slot, &reps)| ConsensusRow {
            reps,
            variance: acc.summary(slot).expect("every prefix holds a replication"),
            bound,
        })
        .collect();
    Ok(finish(spec, Vec::new(), RunData::Consensus(rows)))
}
