//! Sensor graphs, symmetric consensus weights and the distributed
//! identification algorithms, simulated in synchronous rounds.

mod consensus;
mod offline;
mod online;
mod release;

use nalgebra::DMatrix;
use petgraph::algo::connected_components;
use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::psdlinalg::SymMatrix;
use crate::{Error, Real, Result};

pub use consensus::{
    consensus_rounds, private_initial_states, run_private_consensus, run_private_consensus_with,
    ConsensusNoise,
};
pub use offline::{run_offline, OfflinePlan, OfflineRun};
pub use online::{run_online, GhatIndex, OnlineOptions, OnlineParams, OnlinePlan, OnlineRun};
pub use release::{GainForm, PrivacyScheme, ReleaseBuffers, ReleaseNoise, SensorRelease};

/// Undirected graph in the fixture format `{"n": .., "edges": [[i, j], ..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    /// Validates indices and drops duplicate edges; edges are stored as
    /// sorted `[low, high]` pairs.
    pub fn new(n: usize, edges: Vec<[usize; 2]>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut out = Vec::with_capacity(edges.len());
        for [i, j] in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge [{i}, {j}] outside 0..{n}")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self loop at node {i}")));
            }
            out.push([i.min(j), i.max(j)]);
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { n, edges: out })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Graph = serde_json::from_str(text)?;
        Self::new(raw.n, raw.edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| [i, j])).collect();
        Self::new(n, edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| [i - 1, i]).collect())
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let mut edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
        if n > 2 {
            edges.push([n - 1, 0]);
        }
        Self::new(n, edges)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for [i, j] in &self.edges {
            d[*i] += 1;
            d[*j] += 1;
        }
        d
    }

    pub fn is_connected(&self) -> bool {
        let mut g = UnGraph::<(), ()>::with_capacity(self.n, self.edges.len());
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for [i, j] in &self.edges {
            g.add_edge(nodes[*i], nodes[*j], ());
        }
        connected_components(&g) == 1
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for [i, j] in &self.edges {
            adj[*i].push(*j);
            adj[*j].push(*i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }
}

/// A connected graph with symmetric, row-stochastic weights supported on the
/// edges and the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork<T: Real> {
    graph: Graph,
    neighbors: Vec<Vec<usize>>,
    weights: DMatrix<T>,
}

fn row_sum_tol<T: Real>() -> T {
    let ulps = T::default_epsilon() * T::lit(16.0);
    let floor = T::lit(1e-12);
    if ulps > floor {
        ulps
    } else {
        floor
    }
}

impl<T: Real> SensorNetwork<T> {
    pub fn from_weights(graph: Graph, weights: DMatrix<T>) -> Result<Self> {
        let n = graph.n;
        if weights.nrows() != n || weights.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "consensus weights",
                expected: n,
                actual: weights.nrows(),
            });
        }
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let neighbors = graph.adjacency();
        for i in 0..n {
            let mut sum = T::zero();
            for j in 0..n {
                let a = weights[(i, j)];
                if a != weights[(j, i)] {
                    return Err(Error::InvalidInput(format!("weights not symmetric at ({i}, {j})")));
                }
                let on_support = i == j || neighbors[i].binary_search(&j).is_ok();
                if !(a >= T::zero()) || (a > T::zero()) != on_support {
                    return Err(Error::InvalidInput(format!(
                        "weight ({i}, {j}) must be positive exactly on edges and the diagonal"
                    )));
                }
                sum += a;
            }
            if (sum - T::one()).abs() > row_sum_tol::<T>() {
                return Err(Error::InvalidInput(format!("row {i} of the weights sums to {sum}")));
            }
        }
        Ok(Self {
            graph,
            neighbors,
            weights,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.graph.n
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    /// Second largest eigenvalue modulus of the weights: the per-round
    /// contraction factor of the disagreement.
    pub fn mixing_rate(&self) -> T {
        let n = self.n_sensors();
        if n == 1 {
            return T::zero();
        }
        let ev = SymMatrix::new(self.weights.clone())
            .expect("validated weights are symmetric")
            .eigenvalues();
        ev[0].abs().max(ev[n - 2].abs())
    }

    /// `a^k`.
    pub fn power(&self, k: usize) -> DMatrix<T> {
        let n = self.n_sensors();
        let mut out = DMatrix::identity(n, n);
        let mut base = self.weights.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                out = &out * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        out
    }
}

/// Metropolis weights `a_ij = 1 / (1 + max(deg_i, deg_j))` on edges and
/// `a_ii = 1 - Σ_{j≠i} a_ij`.
pub fn metropolis_weights<T: Real>(graph: &Graph) -> Result<SensorNetwork<T>> {
    let n = graph.n;
    let deg = graph.degrees();
    let mut w = DMatrix::<T>::zeros(n, n);
    for [i, j] in &graph.edges {
        let a = T::one() / T::lit((1 + deg[*i].max(deg[*j])) as f64);
        w[(*i, *j)] = a;
        w[(*j, *i)] = a;
    }
    for i in 0..n {
        let mut off = T::zero();
        for j in 0..n {
            if j != i {
                off += w[(i, j)];
            }
        }
        w[(i, i)] = T::one() - off;
    }
    SensorNetwork::from_weights(graph.clone(), w)
}

/// What a message carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    /// The privatized output `z` a sensor computes from its own measurement.
    /// Never transmitted; logged so transcripts can be replayed.
    Release,
    /// Offline information vector `x_{i,k}`.
    X,
    /// Offline information matrix `r_{i,k}`.
    R,
    /// Online estimate `θ̂_{i,k}`.
    Theta,
    /// Online fused Fisher estimate `Ĝ_{i,k}`.
    Ghat,
    /// Consensus state `x_{i,k}`.
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message<T> {
    pub round: usize,
    pub sender: usize,
    pub kind: MessageKind,
    pub value: Vec<T>,
}

/// Transcript of a simulated run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MessageLog<T> {
    pub messages: Vec<Message<T>>,
}

impl<T: Real> MessageLog<T> {
    pub fn new() -> Self {
        Self { messages: Vec::new() }
    }

    pub fn push<'a>(&mut self, round: usize, sender: usize, kind: MessageKind, value: impl IntoIterator<Item = &'a T>) {
        self.messages.push(Message {
            round,
            sender,
            kind,
            value: value.into_iter().copied().collect(),
        });
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &Message<T>> {
        self.messages.iter().filter(move |m| m.kind == kind)
    }

    /// All messages except local releases.
    pub fn transmitted(&self) -> Vec<&Message<T>> {
        self.messages.iter().filter(|m| m.kind != MessageKind::Release).collect()
    }

    /// Logged release of `sender` at `round`.
    pub fn release(&self, round: usize, sender: usize) -> Option<&[T]> {
        self.of_kind(MessageKind::Release)
            .find(|m| m.round == round && m.sender == sender)
            .map(|m| m.value.as_slice())
    }
}

fn check_sensor_count(network_n: usize, got: usize, context: &'static str) -> Result<()> {
    if network_n != got {
        return Err(Error::DimensionMismatch {
            context,
            expected: network_n,
            actual: got,
        });
    }
    Ok(())
}
