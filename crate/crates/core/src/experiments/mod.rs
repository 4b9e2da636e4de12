//! Seeded Monte Carlo scenarios: the single-system mechanism sweep, the
//! distributed offline and online runs, and private average consensus.
//!
//! Every replication draws from its own ChaCha8 stream (`set_stream(rep)`)
//! under a per-condition key derived from the master seed. Replications run
//! in fixed-size chunks whose accumulators are merged in chunk order, so
//! results do not depend on the number of worker threads.

mod check;
mod consensus;
mod distributed;
mod output;
mod spec;
mod sweep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::{MeanStderr, Moments};
use crate::Result;

pub use check::{check_scenario, CheckItem, CheckReport};
pub use consensus::{run_consensus_experiment, ConsensusRow};
pub use distributed::{default_checkpoints, run_offline_experiment, run_online_experiment, TrajRow, Trajectory};
pub use output::{line_plot, Series};
pub use spec::{
    parse_json, ExperimentSpec, GraphSpec, InitSpec, LogGrid, MatrixSpec, Scenario, Sweep, UniformSpec, DEFAULT_MECHANISMS,
    DEFAULT_SCHEMES,
};
pub use sweep::{run_mech_sweep, SweepRow};

/// Provenance of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: Scenario,
    pub seed: u64,
    pub reps: usize,
    /// Content hash of the canonical spec.
    pub spec_hash: String,
    /// Content hash of all CSV output.
    pub result_hash: String,
    /// Notable events such as a re-drawn `H`.
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunData {
    MechSweep(Vec<SweepRow>),
    /// One trajectory per privacy scheme; online rows hold `k · MSE`.
    Offline(Vec<Trajectory>),
    Online(Vec<Trajectory>),
    Consensus(Vec<ConsensusRow>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub meta: RunMeta,
    pub data: RunData,
}

/// Validates `spec` and runs its scenario.
pub fn run(spec: &ExperimentSpec) -> Result<RunResult> {
    match spec.scenario {
        Scenario::MechSweep => run_mech_sweep(spec),
        Scenario::Offline => run_offline_experiment(spec),
        Scenario::Online => run_online_experiment(spec),
        Scenario::Consensus => run_consensus_experiment(spec),
    }
}

pub(crate) fn finish(spec: &ExperimentSpec, events: Vec<String>, data: RunData) -> RunResult {
    let mut result = RunResult {
        meta: RunMeta {
            scenario: spec.scenario,
            seed: spec.seed,
            reps: spec.reps,
            spec_hash: spec.content_hash(),
            result_hash: String::new(),
            events,
        },
        data,
    };
    result.meta.result_hash = result.output_hash();
    result
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Generator of replication `rep` under condition `condition`.
pub fn rep_rng(seed: u64, condition: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ condition.wrapping_add(1).wrapping_mul(GOLDEN));
    rng.set_stream(rep as u64);
    rng
}

const CHUNK: usize = 16;

/// Per-slot moments plus a running maximum.
#[derive(Debug, Clone)]
pub(crate) struct Acc {
    pub slots: Vec<Moments>,
    pub max: f64,
}

impl Acc {
    fn new(slots: usize) -> Self {
        Self {
            slots: vec![Moments::default(); slots],
            max: f64::NEG_INFINITY,
        }
    }

    fn merge(&mut self, other: &Acc) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.merge(b);
        }
        self.max = self.max.max(other.max);
    }

    pub fn summary(&self, slot: usize) -> Option<MeanStderr> {
        let m = &self.slots[slot];
        (m.count() > 0).then(|| m.summary())
    }
}

/// Runs `body(rep, acc)` for every replication and merges in a fixed order.
pub(crate) fn replicate<F>(reps: usize, slots: usize, body: F) -> Result<Acc>
where
    F: Fn(usize, &mut Acc) -> Result<()> + Sync,
{
    let chunks: Vec<Result<Acc>> = (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::new(slots);
            for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                body(rep, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Acc::new(slots);
    for c in chunks {
        total.merge(&c?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
