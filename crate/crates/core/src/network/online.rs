//! Distributed online identification: consensus plus innovations, with a
//! quasi-Newton gain built from distributed estimates of the fused
//! privacy-preserving Fisher information.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::offline::mix;
use super::release::{releases_for, GainForm, PrivacyScheme, SensorRelease};
use super::{check_sensor_count, MessageKind, MessageLog, SensorNetwork};
use crate::bounds::{joint_identifiable, SensorBlock};
use crate::psdlinalg::{robust_inverse, PsdMatrix, SymMatrix};
use crate::{Error, Real, Result};

/// Step sizes: consensus weight `b / (k + k0)^τ`, gain regularizer `ζ^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineParams {
    pub tau: f64,
    pub b: f64,
    pub k0: f64,
    pub zeta: f64,
}

impl Default for OnlineParams {
    fn default() -> Self {
        Self {
            tau: 0.7,
            b: 20.0,
            k0: 20.0,
            zeta: 0.1,
        }
    }
}

impl OnlineParams {
    pub fn new(tau: f64, b: f64, k0: f64, zeta: f64) -> Result<Self> {
        let p = Self { tau, b, k0, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau = {} outside (1/2, 1)", self.tau)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) || !(self.k0 > 0.0 && self.k0.is_finite()) {
            return Err(Error::InvalidInput("b and k0 must be positive".into()));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::InvalidInput(format!("zeta = {} outside (0, 1)", self.zeta)));
        }
        Ok(())
    }

    pub fn consensus_step(&self, k: usize) -> f64 {
        self.b / (k as f64 + self.k0).powf(self.tau)
    }
}

/// Which fused Fisher estimate enters the gain at round `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GhatIndex {
    /// `Ĝ_{i,k-1}`.
    #[default]
    Previous,
    /// `Ĝ_{i,k}`, computed earlier in the same round.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OnlineOptions {
    #[serde(default)]
    pub gain_form: GainForm,
    #[serde(default)]
    pub ghat_index: GhatIndex,
}

/// Data-independent part of an online run: `Ĝ_{i,k}` and the gains, shared
/// by every replication.
#[derive(Debug, Clone)]
pub struct OnlinePlan<T: Real> {
    network: SensorNetwork<T>,
    releases: Vec<SensorRelease<T>>,
    params: OnlineParams,
    k_max: usize,
    ghat: Vec<Vec<DMatrix<T>>>,
    /// `K_{i,k}` at `[(k - 1) * N + i]`.
    gains: Vec<DMatrix<T>>,
}

/// Squared errors `‖θ̂_{i,k} - θ‖²` at the requested checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRun<T: Real> {
    pub checkpoints: Vec<usize>,
    /// Indexed `[checkpoint][sensor]`.
    pub sq_errors: Vec<Vec<T>>,
    pub final_estimates: Vec<DVector<T>>,
}

impl<T: Real> OnlinePlan<T> {
    pub fn new(
        network: &SensorNetwork<T>,
        blocks: &[SensorBlock<T>],
        scheme: PrivacyScheme,
        params: OnlineParams,
        options: OnlineOptions,
        k_max: usize,
    ) -> Result<Self> {
        params.validate()?;
        check_sensor_count(network.n_sensors(), blocks.len(), "sensor blocks")?;
        if !joint_identifiable(blocks)? {
            return Err(Error::NotIdentifiable);
        }
        let releases = releases_for(blocks, scheme, options.gain_form)?;
        let n_s = network.n_sensors();
        let n = releases[0].n();
        let mut ghat = vec![releases.iter().map(|r| r.info.as_matrix().clone()).collect::<Vec<_>>()];
        let mut gains = Vec::with_capacity(k_max * n_s);
        for k in 1..=k_max {
            let next: Vec<_> = (0..n_s).map(|i| mix(network, &ghat[k - 1], i)).collect();
            ghat.push(next);
            let reg = T::lit(params.zeta.powi(k.min(i32::MAX as usize) as i32));
            let source = match options.ghat_index {
                GhatIndex::Previous => k - 1,
                GhatIndex::Current => k,
            };
            for (i, rel) in releases.iter().enumerate() {
                let g = SymMatrix::new(&ghat[source][i] + DMatrix::identity(n, n) * reg)?;
                let inv = robust_inverse(&g, T::zero())
                    .map_err(|e| Error::Singular(format!("gain of sensor {i} at round {k}: {e}")))?;
                gains.push(inv.as_matrix() * &rel.fuse);
            }
        }
        Ok(Self {
            network: network.clone(),
            releases,
            params,
            k_max,
            ghat,
            gains,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn releases(&self) -> &[SensorRelease<T>] {
        &self.releases
    }

    pub fn ghat(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.ghat[k][i]
    }

    pub fn gain(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.gains[(k - 1) * self.network.n_sensors() + i]
    }

    /// `(1/N) Σ_i r_{i,0}`, the limit of every `Ĝ_{i,k}`.
    pub fn fused_info_mean(&self) -> DMatrix<T> {
        let n = self.releases[0].n();
        let sum = self.releases.iter().fold(DMatrix::zeros(n, n), |acc, r| acc + r.info.as_matrix());
        sum / T::lit(self.releases.len() as f64)
    }

    /// `trace((Σ_i r_{i,0})⁻¹)`, the limit of `k · MSE` for an efficient run.
    pub fn asymptote(&self) -> Result<T> {
        let total = self.fused_info_mean() * T::lit(self.releases.len() as f64);
        Ok(PsdMatrix::new(robust_inverse(&SymMatrix::new(total)?, T::zero())?)?.trace())
    }

    /// Runs on outputs supplied by `next_z(k, i, z)`; only `z` and public
    /// matrices enter the update. `observe(k, θ̂)` sees the `n × N` estimates
    /// after every round, including round 0.
    pub fn drive(
        &self,
        init: &DVector<T>,
        mut next_z: impl FnMut(usize, usize, &mut DVector<T>),
        mut observe: impl FnMut(usize, &DMatrix<T>),
        mut log: Option<&mut MessageLog<T>>,
    ) -> Result<()> {
        let n_s = self.network.n_sensors();
        let n = self.releases[0].n();
        if init.len() != n {
            return Err(Error::DimensionMismatch {
                context: "initial estimate",
                expected: n,
                actual: init.len(),
            });
        }
        let mut theta = DMatrix::from_fn(n, n_s, |r, _| init[r]);
        let mut next = theta.clone();
        let mut z: Vec<DVector<T>> = self.releases.iter().map(|r| DVector::zeros(r.output_dim())).collect();
        let mut diff = DVector::<T>::zeros(n);
        if let Some(log) = log.as_deref_mut() {
            self.log_round(log, 0, &theta);
        }
        observe(0, &theta);
        for k in 1..=self.k_max {
            let alpha = T::lit(self.params.consensus_step(k));
            let inv_k = T::one() / T::lit(k as f64);
            for (i, rel) in self.releases.iter().enumerate() {
                next_z(k, i, &mut z[i]);
                if let Some(log) = log.as_deref_mut() {
                    log.push(k, i, MessageKind::Release, z[i].iter());
                }
                let mut col = next.column_mut(i);
                col.copy_from(&theta.column(i));
                for &j in self.network.neighbors(i) {
                    diff.copy_from(&theta.column(i));
                    diff -= theta.column(j);
                    col.axpy(-alpha * self.network.weight(i, j), &diff, T::one());
                }
                // innovation z - A H θ̂_{i,k-1}, reusing z in place
                z[i].gemv(-T::one(), &rel.ah, &theta.column(i), T::one());
                col.gemv(inv_k, self.gain(k, i), &z[i], T::one());
            }
            std::mem::swap(&mut theta, &mut next);
            if let Some(log) = log.as_deref_mut() {
                self.log_round(log, k, &theta);
            }
            observe(k, &theta);
        }
        Ok(())
    }

    fn log_round(&self, log: &mut MessageLog<T>, k: usize, theta: &DMatrix<T>) {
        for i in 0..theta.ncols() {
            log.push(k, i, MessageKind::Theta, theta.column(i).iter());
            log.push(k, i, MessageKind::Ghat, self.ghat[k][i].iter());
        }
    }

    /// One replication with fresh measurements `y_{i,k} = H_i θ + w_{i,k}`.
    /// `checkpoints` must be increasing and at most `k_max`.
    pub fn run<R: Rng + ?Sized>(
        &self,
        theta_true: &DVector<T>,
        init: &DVector<T>,
        checkpoints: &[usize],
        rng: &mut R,
        log: Option<&mut MessageLog<T>>,
    ) -> Result<OnlineRun<T>> {
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.last().is_some_and(|&c| c > self.k_max) {
            return Err(Error::InvalidInput("checkpoints must increase and stay within k_max".into()));
        }
        if theta_true.len() != self.releases[0].n() {
            return Err(Error::DimensionMismatch {
                context: "theta",
                expected: self.releases[0].n(),
                actual: theta_true.len(),
            });
        }
        let mut bufs: Vec<_> = self.releases.iter().map(SensorRelease::buffers).collect();
        let mut sq_errors = Vec::with_capacity(checkpoints.len());
        let mut final_estimates = Vec::new();
        let mut c = 0;
        let releases = &self.releases;
        let k_max = self.k_max;
        // the closure owns the RNG borrow; observe only reads θ̂
        let next_z = |_k: usize, i: usize, z: &mut DVector<T>| {
            releases[i].measure_release_into(theta_true, &mut bufs[i], z, rng);
        };
        let observe = |k: usize, theta: &DMatrix<T>| {
            if c < checkpoints.len() && checkpoints[c] == k {
                sq_errors.push(
                    theta
                        .column_iter()
                        .map(|col| (col - theta_true).norm_squared())
                        .collect(),
                );
                c += 1;
            }
            if k == k_max {
                final_estimates = theta.column_iter().map(|col| col.into_owned()).collect();
            }
        };
        self.drive(init, next_z, observe, log)?;
        Ok(OnlineRun {
            checkpoints: checkpoints.to_vec(),
            sq_errors,
            final_estimates,
        })
    }
}

/// Gaussian-scheme online identification with the default options.
#[allow(clippy::too_many_arguments)]
pub fn run_online<T: Real, R: Rng + ?Sized>(
    network: &SensorNetwork<T>,
    blocks: &[SensorBlock<T>],
    theta_true: &DVector<T>,
    params: OnlineParams,
    k_steps: usize,
    checkpoints: &[usize],
    rng: &mut R,
) -> Result<OnlineRun<T>> {
    let plan = OnlinePlan::new(network, blocks, PrivacyScheme::Gaussian, params, OnlineOptions::default(), k_steps)?;
    plan.run(theta_true, &DVector::zeros(theta_true.len()), checkpoints, rng, None)
}
