//! Privacy-preserving Cramér-Rao lower bounds for linear measurement systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`psdlinalg`]: symmetric / positive semidefinite matrices, principal square
//!   roots and Loewner-order checks.
//! * [`fisher`]: Fisher information of the supported noise families, the affine
//!   push-forward rule and Monte Carlo admissibility audits.
//! * [`mechanisms`]: calibrated stochastic obfuscation mechanisms.
//! * [`bounds`]: identifiability tests, the privacy-preserving CR bound and the
//!   additivity of privacy-preserving Fisher information.
//! * [`estimators`]: the estimators paired with each mechanism.
//! * [`network`]: sensor graphs, consensus weights and the distributed
//!   offline / online identification algorithms.
//! * [`experiments`]: seeded Monte Carlo scenarios and CSV output.
//!
//! The linear-algebra core (`psdlinalg`, `fisher` closed forms, `bounds`,
//! `network`) is generic over the scalar type through [`Real`]; the Monte Carlo
//! layers work in `f64`. Concrete aliases for `f64` are exported below.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fisher;
pub mod mechanisms;
pub mod network;
pub mod psdlinalg;
pub mod stats;

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};

/// Real scalar the linear-algebra core is generic over (`f32` or `f64`).
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion of an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Conversion to `f64` for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Relative tolerance used for PSD and rank decisions: `1e-10`, widened to a
    /// few ulps for low-precision scalars.
    fn default_tol() -> Self {
        let floor = Self::lit(1e-10);
        let ulps = Self::default_epsilon() * Self::lit(64.0);
        if ulps > floor {
            ulps
        } else {
            floor
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type SymMatrix64 = psdlinalg::SymMatrix<f64>;
pub type PsdMatrix64 = psdlinalg::PsdMatrix<f64>;
pub type FisherMatrix64 = fisher::FisherMatrix<f64>;
pub type NoiseFamily64 = fisher::NoiseFamily<f64>;
pub type PpcrResult64 = bounds::PpcrResult<f64>;
pub type SensorBlock64 = bounds::SensorBlock<f64>;
pub type SensorNetwork64 = network::SensorNetwork<f64>;

pub type SymMatrix32 = psdlinalg::SymMatrix<f32>;
pub type PsdMatrix32 = psdlinalg::PsdMatrix<f32>;
