//! Scenario files.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mechanisms::MechanismKind;
use crate::network::{ConsensusNoise, Graph, OnlineOptions, OnlineParams, PrivacyScheme};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MechSweep,
    Offline,
    Online,
    Consensus,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::MechSweep => "mech_sweep",
            Scenario::Offline => "offline",
            Scenario::Online => "online",
            Scenario::Consensus => "consensus",
        }
    }
}

/// `{"low": -1, "high": 1, "rows": 10, "cols": 5, "seed": 3}`. Without a
/// seed the scenario seed is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {
    pub low: f64,
    pub high: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A matrix given row by row or drawn entrywise from a uniform law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Uniform { uniform: UniformSpec },
    Explicit(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn uniform(low: f64, high: f64, rows: usize, cols: usize, seed: Option<u64>) -> Self {
        MatrixSpec::Uniform {
            uniform: UniformSpec {
                low,
                high,
                rows,
                cols,
                seed,
            },
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixSpec::Uniform { uniform } => (uniform.rows, uniform.cols),
            MatrixSpec::Explicit(rows) => (rows.len(), rows.first().map_or(0, Vec::len)),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, MatrixSpec::Uniform { .. })
    }

    /// Draws (or copies) the matrix. `seed_offset` is added to the draw seed.
    pub fn realize(&self, default_seed: u64, seed_offset: u64) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Uniform { uniform: u } => {
                if !(u.low < u.high) || !u.low.is_finite() || !u.high.is_finite() {
                    return Err(Error::config("h.uniform", "need finite low < high"));
                }
                if u.rows == 0 || u.cols == 0 {
                    return Err(Error::config("h.uniform", "rows and cols must be positive"));
                }
                let seed = u.seed.unwrap_or(default_seed).wrapping_add(seed_offset);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // row-major draw order, independent of storage layout
                let mut out = DMatrix::zeros(u.rows, u.cols);
                for r in 0..u.rows {
                    for c in 0..u.cols {
                        out[(r, c)] = rng.random_range(u.low..u.high);
                    }
                }
                Ok(out)
            }
            MatrixSpec::Explicit(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                    return Err(Error::config("h", "explicit matrix must be non-empty and rectangular"));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config("h", "entries must be finite"));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

/// Budget grid: `{"start", "step", "stop"}`, `{"log": {...}}` or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep {
    Linear { start: f64, step: f64, stop: f64 },
    Log { log: LogGrid },
    Values(Vec<f64>),
}

fn tidy(x: f64) -> f64 {
    // strip accumulated rounding so 0.1 + 2*0.1 prints as 0.3
    let p = 10f64.powi(12 - x.abs().log10().ceil() as i32);
    (x * p).round() / p
}

impl Sweep {
    /// Parses `start:step:stop`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::config("grid", format!("expected start:step:stop, got `{text}`")));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("grid", format!("`{s}` is not a number")))
        };
        let sweep = Sweep::Linear {
            start: num(parts[0])?,
            step: num(parts[1])?,
            stop: num(parts[2])?,
        };
        sweep.values()?;
        Ok(sweep)
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let out = match self {
            Sweep::Linear { start, step, stop } => {
                if !(*step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return Err(Error::config("sweep", "need step > 0 and stop >= start"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| tidy(start + i as f64 * step)).collect()
            }
            Sweep::Log { log } => {
                if log.points == 0 || !(log.start > 0.0) || !(log.stop >= log.start) {
                    return Err(Error::config("sweep.log", "need 0 < start <= stop and points >= 1"));
                }
                if log.points == 1 {
                    vec![log.start]
                } else {
                    let (a, b) = (log.start.ln(), log.stop.ln());
                    (0..log.points)
                        .map(|i| tidy((a + (b - a) * i as f64 / (log.points - 1) as f64).exp()))
                        .collect()
                }
            }
            Sweep::Values(v) => v.clone(),
        };
        if out.is_empty() || out.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::config("sweep", "values must be positive and finite"));
        }
        Ok(out)
    }
}

/// Inline graph, a file next to the scenario, or `{"complete": n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Inline(Graph),
    File { file: PathBuf },
    Complete { complete: usize },
}

impl GraphSpec {
    pub fn resolve(&self) -> Result<Graph> {
        match self {
            GraphSpec::Inline(g) => Graph::new(g.n, g.edges.clone()),
            GraphSpec::Complete { complete } => Graph::complete(*complete),
            GraphSpec::File { file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| Error::config("graph.file", format!("{}: {e}", file.display())))?;
                Graph::from_json(&text)
            }
        }
    }
}

/// Starting point of the online algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitSpec {
    Zero,
    /// Fused estimate from one extra round of private releases.
    LeastSquares,
    Fixed(Vec<f64>),
}

fn default_reps() -> usize {
    2000
}

fn default_sigma() -> f64 {
    0.2
}

/// One Monte Carlo scenario. Fields that a scenario does not use are
/// ignored; missing ones take the defaults documented on each runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<MatrixSpec>,
    /// Standard deviation of the i.i.d. Gaussian measurement noise.
    #[serde(default = "default_sigma")]
    pub sigma_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanisms: Option<Vec<MechanismKind>>,
    /// Per-sensor budget `S_i = s I` of the network scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// Per-agent budgets of the consensus scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<f64>>,
    /// Private values of the consensus scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_per_sensor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<PrivacyScheme>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online_options: Option<OnlineOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<ConsensusNoise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_samples: Option<usize>,
}

/// The six mechanism/estimator pairs of the sweep.
pub const DEFAULT_MECHANISMS: [MechanismKind; 6] = [
    MechanismKind::GaussianOptimal,
    MechanismKind::LaplaceData,
    MechanismKind::LaplaceOutput,
    MechanismKind::CauchyData,
    MechanismKind::Cos2Output,
    MechanismKind::TwinUniformMult,
];

pub const DEFAULT_SCHEMES: [PrivacyScheme; 3] =
    [PrivacyScheme::Gaussian, PrivacyScheme::LaplaceData, PrivacyScheme::LaplaceOutput];

impl ExperimentSpec {
    /// A spec with every optional field unset.
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            reps: default_reps(),
            seed: 0,
            theta: Vec::new(),
            h: None,
            sigma_w: default_sigma(),
            sweep: None,
            mechanisms: None,
            budget: None,
            budgets: None,
            values: None,
            graph: None,
            rows_per_sensor: None,
            iterations: None,
            checkpoints: None,
            algorithms: None,
            online: None,
            online_options: None,
            init: None,
            noise: None,
            audit_samples: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }

    /// Reads a scenario and inlines a graph file given relative to it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        if let Some(GraphSpec::File { file }) = &spec.graph {
            let full = if file.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(file)
            } else {
                file.clone()
            };
            let g = GraphSpec::File { file: full }.resolve()?;
            spec.graph = Some(GraphSpec::Inline(g));
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        if !(self.sigma_w > 0.0) || !self.sigma_w.is_finite() {
            return Err(Error::config("sigma_w", "must be positive"));
        }
        if let Some(s) = &self.sweep {
            s.values()?;
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("theta", "entries must be finite"));
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::config("budget", "must be positive"));
            }
        }
        if let Some(b) = &self.budgets {
            if b.is_empty() || b.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::config("budgets", "must be positive"));
            }
        }
        if self.rows_per_sensor == Some(0) {
            return Err(Error::config("rows_per_sensor", "must be positive"));
        }
        if self.audit_samples == Some(0) {
            return Err(Error::config("audit_samples", "must be positive"));
        }
        if let Some(p) = &self.online {
            p.validate().map_err(|e| Error::config("online", e.to_string()))?;
        }
        match self.scenario {
            Scenario::MechSweep | Scenario::Offline | Scenario::Online => {
                if self.theta.is_empty() {
                    return Err(Error::config("theta", "required for this scenario"));
                }
                if let Some(h) = &self.h {
                    if h.shape().1 != self.theta.len() {
                        return Err(Error::config("h", "column count must equal the length of theta"));
                    }
                }
            }
            Scenario::Consensus => {}
        }
        match self.scenario {
            Scenario::MechSweep => {
                if let Some(ms) = &self.mechanisms {
                    if ms.is_empty() {
                        return Err(Error::config("mechanisms", "must not be empty"));
                    }
                }
            }
            Scenario::Offline | Scenario::Online | Scenario::Consensus => {
                if self.graph.is_none() {
                    return Err(Error::config("graph", "required for this scenario"));
                }
                if let Some(a) = &self.algorithms {
                    if a.is_empty() {
                        return Err(Error::config("algorithms", "must not be empty"));
                    }
                }
            }
        }
        if let Some(c) = &self.checkpoints {
            if c.is_empty() || c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("checkpoints", "must be non-empty and increasing"));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the spec.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// Git-style content hash: SHA-256 of `blob <len>\0<canonical json>`.
    pub fn content_hash(&self) -> String {
        hash_blob(self.canonical_json().as_bytes())
    }
}

/// Deserializes JSON, reporting the path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })
}

pub(crate) fn hash_blob(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}
