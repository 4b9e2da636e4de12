//! Identifiability, the privacy-preserving CR bound and its additivity.
//!
//! For a block `(H, S, Σ_w)` with Gaussian measurement noise the
//! privacy-preserving Fisher information is
//!
//! ```text
//! PI = Hᵀ S^½ (S^½ Σ_w S^½ + I)⁻¹ S^½ H,      Σ_PPCR = PI⁻¹.
//! ```

use nalgebra::DMatrix;

use crate::fisher::FisherMatrix;
use crate::psdlinalg::{psd_sqrt, robust_inverse, PsdMatrix, SymMatrix};
use crate::{Error, Real, Result};

/// Outcome of a bound query.
#[derive(Debug, Clone, PartialEq)]
pub struct PpcrResult<T: Real> {
    /// `PI⁻¹`; absent when the system is not identifiable.
    pub sigma_ppcr: Option<PsdMatrix<T>>,
    pub pp_fisher: PsdMatrix<T>,
    pub identifiable: bool,
    /// Whether some admissible mechanism/estimator pair attains the bound
    /// (known for Gaussian measurement noise).
    pub attainable: bool,
}

impl<T: Real> PpcrResult<T> {
    pub fn trace(&self) -> Option<T> {
        self.sigma_ppcr.as_ref().map(|s| s.trace())
    }
}

/// One sensor at one time: `y = H θ + w`, `w ~ N(·, Σ_w)`, budget `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBlock<T: Real> {
    pub h: DMatrix<T>,
    pub s: PsdMatrix<T>,
    pub noise_cov: PsdMatrix<T>,
}

impl<T: Real> SensorBlock<T> {
    pub fn new(h: DMatrix<T>, s: PsdMatrix<T>, noise_cov: PsdMatrix<T>) -> Result<Self> {
        check_dims(&h, &s)?;
        if noise_cov.dim() != h.nrows() {
            return Err(Error::DimensionMismatch {
                context: "noise covariance vs rows of H",
                expected: h.nrows(),
                actual: noise_cov.dim(),
            });
        }
        Ok(Self { h, s, noise_cov })
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    /// `(S^½ Σ_w S^½ + I)⁻¹`.
    pub fn whitening(&self) -> Result<DMatrix<T>> {
        let root = psd_sqrt(&self.s).into_matrix();
        whitening(&root, self.noise_cov.as_matrix())
    }

    /// `Hᵀ S^½ (S^½ Σ_w S^½ + I)⁻¹`: maps `z - S^½ μ_w` to the information
    /// vector of this block.
    pub fn gain(&self) -> Result<DMatrix<T>> {
        let root = psd_sqrt(&self.s).into_matrix();
        let w = whitening(&root, self.noise_cov.as_matrix())?;
        Ok(self.h.transpose() * root * w)
    }

    pub fn pp_fisher(&self) -> Result<PsdMatrix<T>> {
        let root = psd_sqrt(&self.s).into_matrix();
        let w = whitening(&root, self.noise_cov.as_matrix())?;
        let sh = &root * &self.h;
        PsdMatrix::from_matrix(sh.transpose() * w * sh)
    }

    /// `Hᵀ S H`.
    pub fn privacy_gram(&self) -> Result<SymMatrix<T>> {
        self.s.as_sym().congruence(&self.h)
    }
}

fn whitening<T: Real>(root: &DMatrix<T>, cov: &DMatrix<T>) -> Result<DMatrix<T>> {
    let m = root.nrows();
    let inner = SymMatrix::new(root * cov * root + DMatrix::identity(m, m))?;
    Ok(robust_inverse(&inner, T::zero())?.into_matrix())
}

fn check_dims<T: Real>(h: &DMatrix<T>, s: &PsdMatrix<T>) -> Result<()> {
    if h.nrows() == 0 || h.ncols() == 0 {
        return Err(Error::InvalidInput("H must be non-empty".into()));
    }
    if s.dim() != h.nrows() {
        return Err(Error::DimensionMismatch {
            context: "budget S vs rows of H",
            expected: h.nrows(),
            actual: s.dim(),
        });
    }
    Ok(())
}

/// Relative rank test `λ_min > tol · λ_max` with `λ_max > 0`.
pub fn full_rank<T: Real>(m: &SymMatrix<T>) -> bool {
    let ev = m.eigenvalues();
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    hi > T::zero() && lo > T::default_tol() * hi
}

/// `λ_min > tol · scale`, where `scale` bounds `‖m‖` from the inputs `m` was
/// built from. A product that is zero up to round-off then fails even though
/// its own `λ_min / λ_max` may look healthy.
fn full_rank_at_scale<T: Real>(m: &SymMatrix<T>, scale: T) -> bool {
    let ev = m.eigenvalues();
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    hi > T::zero() && lo > T::default_tol() * hi.max(scale)
}

/// Upper bound `‖H‖²_F ‖S‖_F` on `‖HᵀSH‖`.
fn gram_scale<T: Real>(h: &DMatrix<T>, s: &PsdMatrix<T>) -> T {
    h.norm_squared() * s.as_matrix().norm()
}

/// `HᵀSH` invertible.
pub fn identifiable_under_privacy<T: Real>(h: &DMatrix<T>, s: &PsdMatrix<T>) -> Result<bool> {
    check_dims(h, s)?;
    Ok(full_rank_at_scale(&s.as_sym().congruence(h)?, gram_scale(h, s)))
}

/// Bound for an arbitrary invertible `I_y`. `attainable` is left false; use
/// [`ppcr_bound_gaussian`] when the measurement noise is Gaussian.
pub fn ppcr_bound<T: Real>(
    h: &DMatrix<T>,
    s: &PsdMatrix<T>,
    fisher_y: &FisherMatrix<T>,
) -> Result<PpcrResult<T>> {
    check_dims(h, s)?;
    let inv = robust_inverse(fisher_y.value.as_sym(), T::zero())
        .map_err(|_| Error::Singular("fisher information of y must be invertible".into()))?;
    let block = SensorBlock::new(h.clone(), s.clone(), PsdMatrix::new(inv)?)?;
    finish(h, s, block.pp_fisher()?, false)
}

/// Bound for `w ~ N(·, Σ_w)`, where `I_y = Σ_w⁻¹` and the bound is attained.
pub fn ppcr_bound_gaussian<T: Real>(
    h: &DMatrix<T>,
    s: &PsdMatrix<T>,
    noise_cov: &PsdMatrix<T>,
) -> Result<PpcrResult<T>> {
    let block = SensorBlock::new(h.clone(), s.clone(), noise_cov.clone())?;
    finish(h, s, block.pp_fisher()?, true)
}

fn finish<T: Real>(
    h: &DMatrix<T>,
    s: &PsdMatrix<T>,
    pp_fisher: PsdMatrix<T>,
    attainable: bool,
) -> Result<PpcrResult<T>> {
    let identifiable = identifiable_under_privacy(h, s)?;
    let sigma_ppcr = if identifiable {
        let inv = robust_inverse(pp_fisher.as_sym(), T::zero());
        debug_assert!(inv.is_ok(), "identifiable system with singular pp_fisher");
        Some(PsdMatrix::new(inv?)?)
    } else {
        None
    };
    Ok(PpcrResult {
        sigma_ppcr,
        pp_fisher,
        identifiable,
        attainable: attainable && identifiable,
    })
}

fn common_n<T: Real>(blocks: &[SensorBlock<T>]) -> Result<usize> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one block".into()))?;
    let n = first.n();
    for b in blocks {
        if b.n() != n {
            return Err(Error::DimensionMismatch {
                context: "parameter dimension across blocks",
                expected: n,
                actual: b.n(),
            });
        }
    }
    Ok(n)
}

/// `Σ_blocks PI_block`.
pub fn pp_fisher_additive<T: Real>(blocks: &[SensorBlock<T>]) -> Result<PsdMatrix<T>> {
    let n = common_n(blocks)?;
    let mut acc = DMatrix::<T>::zeros(n, n);
    for b in blocks {
        acc += b.pp_fisher()?.into_matrix();
    }
    PsdMatrix::from_matrix(acc)
}

/// The stacked system: `H` stacked, `S` and `Σ_w` block diagonal.
pub fn stack_blocks<T: Real>(blocks: &[SensorBlock<T>]) -> Result<SensorBlock<T>> {
    let n = common_n(blocks)?;
    let m: usize = blocks.iter().map(SensorBlock::m).sum();
    let mut h = DMatrix::<T>::zeros(m, n);
    let mut s = DMatrix::<T>::zeros(m, m);
    let mut c = DMatrix::<T>::zeros(m, m);
    let mut r = 0;
    for b in blocks {
        let k = b.m();
        h.view_mut((r, 0), (k, n)).copy_from(&b.h);
        s.view_mut((r, r), (k, k)).copy_from(b.s.as_matrix());
        c.view_mut((r, r), (k, k)).copy_from(b.noise_cov.as_matrix());
        r += k;
    }
    SensorBlock::new(h, PsdMatrix::from_matrix(s)?, PsdMatrix::from_matrix(c)?)
}

/// `Σ_blocks Hᵀ S H` invertible.
pub fn joint_identifiable<T: Real>(blocks: &[SensorBlock<T>]) -> Result<bool> {
    let n = common_n(blocks)?;
    let mut acc = DMatrix::<T>::zeros(n, n);
    let mut scale = T::zero();
    for b in blocks {
        acc += b.privacy_gram()?.into_matrix();
        scale += gram_scale(&b.h, &b.s);
    }
    Ok(full_rank_at_scale(&SymMatrix::new(acc)?, scale))
}

/// `(1/N²) Σ_i 1/S_i`: variance floor of privately averaging `N` scalars
/// with per-agent budgets `S_i`.
pub fn consensus_mse_bound<T: Real>(s_list: &[T]) -> Result<T> {
    if s_list.is_empty() {
        return Err(Error::InvalidInput("need at least one agent".into()));
    }
    let mut acc = T::zero();
    for &s in s_list {
        if !(s > T::zero()) {
            return Err(Error::InvalidInput("every budget S_i must be positive".into()));
        }
        acc += T::one() / s;
    }
    let n = T::lit(s_list.len() as f64);
    Ok(acc / (n * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::{fisher_of_noise, NoiseFamily, Wrt};
    use crate::psdlinalg::loewner_leq;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id(n: usize) -> PsdMatrix<f64> {
        PsdMatrix::identity(n)
    }

    #[test]
    fn round_off_gram_is_not_identifiable() {
        // S = b bᵀ with bᵀh = 0; the eigen-clamped S leaves HᵀSH ~ 1e-16
        let s = PsdMatrix::from_matrix(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 4.0])).unwrap();
        let h = DMatrix::from_column_slice(3, 1, &[2.0, -1.0, -1.0]);
        assert!(!identifiable_under_privacy(&h, &s).unwrap());
        let block = SensorBlock::new(h, s, id(3)).unwrap();
        assert!(!joint_identifiable(&[block.clone(), block]).unwrap());
    }

    fn scalar_block(s: f64, sigma: f64) -> SensorBlock<f64> {
        SensorBlock::new(
            DMatrix::from_element(1, 1, 1.0),
            PsdMatrix::scaled_identity(1, s),
            PsdMatrix::scaled_identity(1, sigma * sigma),
        )
        .unwrap()
    }

    fn random_block(rng: &mut ChaCha8Rng, m: usize, n: usize) -> SensorBlock<f64> {
        let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.5..0.5));
        SensorBlock::new(
            h,
            PsdMatrix::from_matrix(&b * b.transpose()).unwrap(),
            PsdMatrix::from_matrix(&c * c.transpose() + DMatrix::identity(m, m) * 0.04).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identifiability_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(identifiable_under_privacy(&i2, &id(2)).unwrap());
        assert!(!identifiable_under_privacy(&i2, &PsdMatrix::zeros(2)).unwrap());
        let ones = DMatrix::from_element(2, 1, 1.0);
        let partial = PsdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        assert!(identifiable_under_privacy(&ones, &partial).unwrap());
    }

    #[test]
    fn identity_case_gives_two_i() {
        let f = fisher_of_noise(&NoiseFamily::gaussian(DVector::zeros(3), id(3)).unwrap()).unwrap();
        let r = ppcr_bound(&DMatrix::identity(3, 3), &id(3), &f).unwrap();
        assert!(r.identifiable);
        assert_relative_eq!(*r.sigma_ppcr.unwrap().as_matrix(), DMatrix::identity(3, 3) * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        let r = ppcr_bound_gaussian(&DMatrix::from_element(1, 1, 1.0), &PsdMatrix::scaled_identity(1, 1.0), &PsdMatrix::scaled_identity(1, 0.04)).unwrap();
        assert_relative_eq!(r.trace().unwrap(), 1.04, max_relative = 1e-12);
        assert!(r.attainable);
    }

    #[test]
    fn non_identifiable_has_no_sigma() {
        let r = ppcr_bound_gaussian(&DMatrix::<f64>::identity(2, 2), &PsdMatrix::zeros(2), &id(2)).unwrap();
        assert!(!r.identifiable && r.sigma_ppcr.is_none() && !r.attainable);
        assert_eq!(r.pp_fisher.as_matrix().norm(), 0.0);
    }

    #[test]
    fn generic_fisher_matches_gaussian_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_block(&mut rng, 4, 2);
        let inv = robust_inverse(b.noise_cov.as_sym(), 0.0).unwrap();
        let f = FisherMatrix::new(PsdMatrix::new(inv).unwrap(), Wrt::HTheta);
        let a = ppcr_bound(&b.h, &b.s, &f).unwrap();
        let g = ppcr_bound_gaussian(&b.h, &b.s, &b.noise_cov).unwrap();
        assert!((a.pp_fisher.as_matrix() - g.pp_fisher.as_matrix()).norm() < 1e-9);
        assert!(!a.attainable && g.attainable);
    }

    #[test]
    fn sigma_is_inverse_of_pp_fisher() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_block(&mut rng, 6, 3);
        let r = ppcr_bound_gaussian(&b.h, &b.s, &b.noise_cov).unwrap();
        let prod = r.sigma_ppcr.unwrap().as_matrix() * r.pp_fisher.as_matrix();
        assert!((prod - DMatrix::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn additivity_examples() {
        let one = scalar_block(1.0, 0.2);
        let single = pp_fisher_additive(std::slice::from_ref(&one)).unwrap();
        assert_relative_eq!(single.as_matrix()[(0, 0)], 1.0 / 1.04, max_relative = 1e-12);
        let two = pp_fisher_additive(&[one.clone(), one]).unwrap();
        assert_relative_eq!(two.as_matrix()[(0, 0)], 2.0 / 1.04, max_relative = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let blocks: Vec<_> = (0..40).map(|_| random_block(&mut rng, 1, 2)).collect();
        let sum = pp_fisher_additive(&blocks).unwrap();
        let whole = stack_blocks(&blocks).unwrap().pp_fisher().unwrap();
        let rel = (sum.as_matrix() - whole.as_matrix()).norm() / whole.as_matrix().norm();
        assert!(rel < 1e-9, "rel = {rel}");
    }

    #[test]
    fn joint_identifiability_examples() {
        let mk = |row: [f64; 2]| SensorBlock::new(DMatrix::from_row_slice(1, 2, &row), id(1), PsdMatrix::scaled_identity(1, 0.04)).unwrap();
        assert!(joint_identifiable(&[mk([1.0, 0.0]), mk([0.0, 1.0])]).unwrap());
        assert!(!joint_identifiable(&[mk([1.0, 0.0]), mk([1.0, 0.0]), mk([1.0, 0.0])]).unwrap());
        assert!(joint_identifiable::<f64>(&[]).is_err());
    }

    #[test]
    fn consensus_bound_examples() {
        assert_relative_eq!(consensus_mse_bound(&[1.0; 8]).unwrap(), 0.125);
        assert_relative_eq!(consensus_mse_bound(&[2.0]).unwrap(), 0.5);
        assert_relative_eq!(consensus_mse_bound(&[1.0, 4.0]).unwrap(), 0.3125);
        assert!(consensus_mse_bound(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_precision_bound() {
        let r = ppcr_bound_gaussian(
            &DMatrix::<f32>::identity(2, 2),
            &PsdMatrix::identity(2),
            &PsdMatrix::identity(2),
        )
        .unwrap();
        assert!((r.trace().unwrap() - 4.0).abs() < 1e-5);
    }

    fn arb_block(m: usize, n: usize) -> impl Strategy<Value = (u64, usize, usize)> {
        (any::<u64>(), Just(m), Just(n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn budget_monotonicity((seed, m, n) in arb_block(5, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b1 = random_block(&mut rng, m, n);
            let extra = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let s2 = PsdMatrix::from_matrix(b1.s.as_matrix() + &extra * extra.transpose()).unwrap();
            let b2 = SensorBlock::new(b1.h.clone(), s2, b1.noise_cov.clone()).unwrap();
            let (f1, f2) = (b1.pp_fisher().unwrap(), b2.pp_fisher().unwrap());
            prop_assert!(loewner_leq(f1.as_sym(), f2.as_sym(), 1e-9).unwrap());
            let r1 = ppcr_bound_gaussian(&b1.h, &b1.s, &b1.noise_cov).unwrap();
            let r2 = ppcr_bound_gaussian(&b2.h, &b2.s, &b2.noise_cov).unwrap();
            if let (Some(a), Some(b)) = (r1.sigma_ppcr, r2.sigma_ppcr) {
                let scale = a.as_matrix().norm().max(1.0);
                prop_assert!(loewner_leq(b.as_sym(), a.as_sym(), 1e-9 * scale).unwrap());
            }
        }

        #[test]
        fn data_processing((seed, m, n) in arb_block(4, 2)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_block(&mut rng, m, n);
            let pf = b.pp_fisher().unwrap();
            prop_assert!(loewner_leq(pf.as_sym(), &b.privacy_gram().unwrap(), 1e-9).unwrap());
            let prec = robust_inverse(b.noise_cov.as_sym(), 0.0).unwrap();
            let no_priv = prec.congruence(&b.h).unwrap();
            prop_assert!(loewner_leq(pf.as_sym(), &no_priv, 1e-9).unwrap());
        }

        #[test]
        fn additivity_random(seed in any::<u64>(), n_sensors in 1usize..=8, k in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<_> = (0..n_sensors * k).map(|_| {
                let m = rng.random_range(1..=3);
                random_block(&mut rng, m, 2)
            }).collect();
            let sum = pp_fisher_additive(&blocks).unwrap();
            let whole = stack_blocks(&blocks).unwrap().pp_fisher().unwrap();
            let rel = (sum.as_matrix() - whole.as_matrix()).norm() / whole.as_matrix().norm().max(1e-300);
            prop_assert!(rel <= 1e-9);
        }

        #[test]
        fn scalar_formula(sigma in 0.01f64..3.0, s in 0.01f64..20.0) {
            let b = scalar_block(s, sigma);
            let r = ppcr_bound_gaussian(&b.h, &b.s, &b.noise_cov).unwrap();
            let expect = sigma * sigma + 1.0 / s;
            prop_assert!((r.trace().unwrap() - expect).abs() <= 1e-10 * expect);
        }
    }
}
