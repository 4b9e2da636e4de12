//! Distributed offline identification by average consensus of information
//! vectors and matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::release::{releases_for, GainForm, PrivacyScheme, SensorRelease};
use super::{check_sensor_count, MessageKind, MessageLog, SensorNetwork};
use crate::bounds::{full_rank, joint_identifiable, SensorBlock};
use crate::psdlinalg::{robust_inverse, PsdMatrix, SymMatrix};
use crate::{Error, Real, Result};

/// Everything about an offline run that does not depend on the data: the
/// `r_{i,k}` trajectory and its inverses.
#[derive(Debug, Clone)]
pub struct OfflinePlan<T: Real> {
    network: SensorNetwork<T>,
    releases: Vec<SensorRelease<T>>,
    k_max: usize,
    r: Vec<Vec<DMatrix<T>>>,
    r_inv: Vec<Vec<Option<DMatrix<T>>>>,
    central_cov: PsdMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineRun<T: Real> {
    /// `θ̂_{i,k}` indexed `[k][i]`; `None` while `r_{i,k}` is rank deficient.
    pub estimates: Vec<Vec<Option<DVector<T>>>>,
    /// The fused estimate `(Σ_i r_{i,0})⁻¹ Σ_i x_{i,0}` all sensors converge to.
    pub central: DVector<T>,
}

impl<T: Real> OfflineRun<T> {
    /// `max_i ‖θ̂_{i,k} - central‖`, `None` if some sensor has no estimate yet.
    pub fn max_deviation(&self, k: usize) -> Option<T> {
        let mut worst = T::zero();
        for e in &self.estimates[k] {
            let d = (e.as_ref()? - &self.central).norm();
            worst = worst.max(d);
        }
        Some(worst)
    }
}

impl<T: Real> OfflinePlan<T> {
    pub fn new(
        network: &SensorNetwork<T>,
        blocks: &[SensorBlock<T>],
        scheme: PrivacyScheme,
        k_max: usize,
    ) -> Result<Self> {
        check_sensor_count(network.n_sensors(), blocks.len(), "sensor blocks")?;
        if !joint_identifiable(blocks)? {
            return Err(Error::NotIdentifiable);
        }
        let releases = releases_for(blocks, scheme, GainForm::RootS)?;
        let n_s = network.n_sensors();
        let mut r = vec![releases.iter().map(|rel| rel.info.as_matrix().clone()).collect::<Vec<_>>()];
        for _ in 0..k_max {
            let prev = r.last().expect("non-empty");
            let next = (0..n_s).map(|i| mix(network, prev, i)).collect();
            r.push(next);
        }
        let r_inv = r
            .iter()
            .map(|round| round.iter().map(invert_if_full_rank).collect())
            .collect();
        let total = r[0].iter().fold(DMatrix::zeros(r[0][0].nrows(), r[0][0].ncols()), |acc, m| acc + m);
        let central_cov = PsdMatrix::new(robust_inverse(&SymMatrix::new(total)?, T::zero())?)?;
        Ok(Self {
            network: network.clone(),
            releases,
            k_max,
            r,
            r_inv,
            central_cov,
        })
    }

    pub fn network(&self) -> &SensorNetwork<T> {
        &self.network
    }

    pub fn releases(&self) -> &[SensorRelease<T>] {
        &self.releases
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `(Σ_i r_{i,0})⁻¹`. For the Gaussian scheme this is the covariance of
    /// the fused estimate and equals the multi-sensor privacy-preserving CR
    /// bound; for output perturbation it ignores the privacy noise.
    pub fn central_cov(&self) -> &PsdMatrix<T> {
        &self.central_cov
    }

    /// `r_{i,k}`.
    pub fn info(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.r[k][i]
    }

    /// Privacy step of every sensor.
    pub fn release_all<R: Rng + ?Sized>(&self, y: &[DVector<T>], rng: &mut R) -> Result<Vec<DVector<T>>> {
        check_sensor_count(self.releases.len(), y.len(), "measurements")?;
        y.iter()
            .zip(&self.releases)
            .map(|(yi, rel)| {
                if yi.len() != rel.m() {
                    return Err(Error::DimensionMismatch {
                        context: "sensor measurement",
                        expected: rel.m(),
                        actual: yi.len(),
                    });
                }
                Ok(rel.release(yi, rng))
            })
            .collect()
    }

    /// Runs the consensus on already privatized outputs. Only `z` and public
    /// matrices enter here.
    pub fn run_from_outputs(&self, z: &[DVector<T>], mut log: Option<&mut MessageLog<T>>) -> Result<OfflineRun<T>> {
        check_sensor_count(self.releases.len(), z.len(), "released outputs")?;
        let n_s = self.releases.len();
        let n = self.releases[0].n();
        let mut x = DMatrix::<T>::zeros(n, n_s);
        for (i, (zi, rel)) in z.iter().zip(&self.releases).enumerate() {
            if zi.len() != rel.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "released output",
                    expected: rel.output_dim(),
                    actual: zi.len(),
                });
            }
            x.set_column(i, &(&rel.fuse * zi));
        }
        let sum: DVector<T> = x.column_sum();
        let central = self.central_cov.as_matrix() * sum;
        let mut estimates = Vec::with_capacity(self.k_max + 1);
        for k in 0..=self.k_max {
            if k > 0 {
                x = &x * self.network.weights();
            }
            if let Some(log) = log.as_deref_mut() {
                for i in 0..n_s {
                    log.push(k, i, MessageKind::X, x.column(i).iter());
                    log.push(k, i, MessageKind::R, self.r[k][i].iter());
                }
            }
            estimates.push(
                (0..n_s)
                    .map(|i| self.r_inv[k][i].as_ref().map(|ri| ri * x.column(i)))
                    .collect(),
            );
        }
        Ok(OfflineRun { estimates, central })
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        y: &[DVector<T>],
        rng: &mut R,
        mut log: Option<&mut MessageLog<T>>,
    ) -> Result<OfflineRun<T>> {
        let z = self.release_all(y, rng)?;
        if let Some(log) = log.as_deref_mut() {
            for (i, zi) in z.iter().enumerate() {
                log.push(0, i, MessageKind::Release, zi.iter());
            }
        }
        self.run_from_outputs(&z, log)
    }
}

/// `a_ii M_i + Σ_{j∈N_i} a_ij M_j`.
pub(crate) fn mix<T: Real>(network: &SensorNetwork<T>, prev: &[DMatrix<T>], i: usize) -> DMatrix<T> {
    let mut out = &prev[i] * network.weight(i, i);
    for &j in network.neighbors(i) {
        out += &prev[j] * network.weight(i, j);
    }
    // keep exact symmetry against rounding
    (&out + out.transpose()) * T::lit(0.5)
}

fn invert_if_full_rank<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let sym = SymMatrix::new(m.clone()).ok()?;
    if !full_rank(&sym) {
        return None;
    }
    robust_inverse(&sym, T::zero()).ok().map(SymMatrix::into_matrix)
}

/// Gaussian-scheme offline identification from realized measurements `y_i`.
pub fn run_offline<T: Real, R: Rng + ?Sized>(
    network: &SensorNetwork<T>,
    blocks: &[SensorBlock<T>],
    y: &[DVector<T>],
    k_iters: usize,
    rng: &mut R,
) -> Result<OfflineRun<T>> {
    OfflinePlan::new(network, blocks, PrivacyScheme::Gaussian, k_iters)?.run(y, rng, None)
}
