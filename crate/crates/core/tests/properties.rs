use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppcr_core::bounds::{identifiable_under_privacy, joint_identifiable, SensorBlock};
use ppcr_core::fisher::{fisher_affine_pushforward, FisherMatrix, NoiseFamily, Wrt};
use ppcr_core::mechanisms::*;
use ppcr_core::psdlinalg::{loewner_leq, PsdMatrix};

fn random_psd(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> PsdMatrix<f64> {
    let b = DMatrix::from_fn(dim, rank, |_, _| rng.random_range(-1.0..1.0));
    PsdMatrix::from_matrix(&b * b.transpose()).unwrap()
}

/// Rank by exact rational elimination.
fn exact_rank(m: &[Vec<i64>]) -> usize {
    let mut a: Vec<Vec<BigRational>> = m
        .iter()
        .map(|r| r.iter().map(|&v| BigRational::from_integer(v.into())).collect())
        .collect();
    let (rows, cols) = (a.len(), a.first().map_or(0, Vec::len));
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !a[r][c].is_zero()) else { continue };
        a.swap(rank, p);
        let inv = BigRational::one() / a[rank][c].clone();
        for r in 0..rows {
            if r != rank && !a[r][c].is_zero() {
                let f = a[r][c].clone() * inv.clone();
                for k in c..cols {
                    let t = a[rank][k].clone() * f.clone();
                    a[r][k] -= t;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn int_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<i64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-2..=2)).collect()).collect()
}

fn mul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect()).collect()
}

fn transpose(a: &[Vec<i64>]) -> Vec<Vec<i64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn to_f64(a: &[Vec<i64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j] as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pushforward_preserves_psd(seed in any::<u64>(), m in 1usize..6, n in 1usize..6, rank in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = FisherMatrix::new(random_psd(&mut rng, m, rank.min(m)), Wrt::Y);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let out = fisher_affine_pushforward(&a, &inner).unwrap();
        let lo = out.value.as_sym().min_eigenvalue();
        prop_assert!(lo >= -1e-9 * out.value.as_matrix().norm().max(1.0));
        prop_assert_eq!(out.with_respect_to, Wrt::Theta);
    }

    #[test]
    fn gaussian_optimal_attains_budget(seed in any::<u64>(), m in 1usize..6, rank in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0));
        let model = MeasurementModel::gaussian_iid(h, 0.3).unwrap();
        let s = random_psd(&mut rng, m, rank.min(m));
        let mech = gaussian_optimal_mechanism(&model, &s).unwrap();
        let f = mech.fisher_at(&DVector::zeros(m)).unwrap();
        prop_assert!((f.value.as_matrix() - s.as_matrix()).norm() <= 1e-9);
    }

    #[test]
    fn global_mechanisms_respect_budget(seed in any::<u64>(), s in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let model = MeasurementModel::gaussian_iid(h, 0.2).unwrap();
        let budget = PsdMatrix::scaled_identity(4, s);
        let mechs = [
            calibrate_laplace_data_perturbation(&model, &budget).unwrap(),
            calibrate_cauchy_data_perturbation(&model, &budget).unwrap(),
            calibrate_cos2_mechanism(&model, &budget).unwrap(),
            calibrate_laplace_output_perturbation(&model, &budget).unwrap(),
            calibrate_cos2_output_perturbation(&model, &budget).unwrap(),
        ];
        for mech in &mechs {
            let f = mech.fisher_at(&DVector::zeros(4)).unwrap();
            prop_assert!(loewner_leq(f.value.as_sym(), budget.as_sym(), 1e-6 * s.max(1.0)).unwrap(), "{:?}", mech.kind);
        }
    }

    #[test]
    fn calibration_monotone(s1 in 0.05f64..10.0, factor in 1.01f64..10.0) {
        let s2 = s1 * factor;
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.0, 0.5, 0.5]);
        let model = MeasurementModel::gaussian_iid(h.clone(), 0.2).unwrap();
        let width = |kind: MechanismKind, s: f64| -> f64 {
            let b = PsdMatrix::scaled_identity(3, s);
            let mech = match kind {
                MechanismKind::LaplaceData => calibrate_laplace_data_perturbation(&model, &b),
                MechanismKind::CauchyData => calibrate_cauchy_data_perturbation(&model, &b),
                MechanismKind::Cos2Data => calibrate_cos2_mechanism(&model, &b),
                _ => {
                    let y = &h * DVector::from_vec(vec![0.5, 0.5]);
                    calibrate_twin_uniform_multiplicative(&model, &b, &(&y.add_scalar(-0.6)), &y.add_scalar(0.6), TwinOffset::Auto)
                }
            }
            .unwrap();
            match mech.noise_family().unwrap() {
                NoiseFamily::LaplaceIid { scale, .. } | NoiseFamily::CauchyIid { scale, .. } => *scale,
                NoiseFamily::Cos2Bounded { lower, upper, .. } => upper - lower,
                NoiseFamily::TwinUniform { half_width, .. } => *half_width,
                NoiseFamily::Gaussian { .. } => unreachable!(),
            }
        };
        for kind in [MechanismKind::LaplaceData, MechanismKind::CauchyData, MechanismKind::Cos2Data] {
            prop_assert!(width(kind, s1) > width(kind, s2));
        }
        // twin lobes narrow as the budget loosens only relative to the offset; the
        // leaked information sup J/q² must not decrease
        let twin = |s: f64| {
            let b = PsdMatrix::scaled_identity(3, s);
            let y = &h * DVector::from_vec(vec![0.5, 0.5]);
            let m = calibrate_twin_uniform_multiplicative(&model, &b, &y.add_scalar(-0.6), &y.add_scalar(0.6), TwinOffset::Auto).unwrap();
            let f = m.fisher_at(&y).unwrap();
            f.value.as_sym().max_eigenvalue()
        };
        prop_assert!(twin(s1) <= twin(s2) * (1.0 + 1e-9));
    }

    #[test]
    fn identifiability_matches_exact_rank(seed in any::<u64>(), m in 1usize..6, n in 1usize..4, r in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = int_matrix(&mut rng, m, n);
        let b = int_matrix(&mut rng, m, r.min(m));
        let s = if b[0].is_empty() { vec![vec![0; m]; m] } else { mul(&b, &transpose(&b)) };
        let gram = mul(&mul(&transpose(&h), &s), &h);
        let exact = exact_rank(&gram) == n;
        let got = identifiable_under_privacy(&to_f64(&h), &PsdMatrix::from_matrix(to_f64(&s)).unwrap()).unwrap();
        prop_assert_eq!(got, exact);
    }

    #[test]
    fn joint_identifiability_matches_exact_rank(seed in any::<u64>(), sensors in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let mut total = vec![vec![0i64; n]; n];
        let mut blocks = Vec::new();
        for _ in 0..sensors {
            let m = rng.random_range(1..=2);
            let h = int_matrix(&mut rng, m, n);
            let r = rng.random_range(0..=m);
            let b = int_matrix(&mut rng, m, r);
            let s = if b[0].is_empty() { vec![vec![0; m]; m] } else { mul(&b, &transpose(&b)) };
            let g = mul(&mul(&transpose(&h), &s), &h);
            for i in 0..n {
                for j in 0..n {
                    total[i][j] += g[i][j];
                }
            }
            blocks.push(SensorBlock::new(to_f64(&h), PsdMatrix::from_matrix(to_f64(&s)).unwrap(), PsdMatrix::identity(m)).unwrap());
        }
        prop_assert_eq!(joint_identifiable(&blocks).unwrap(), exact_rank(&total) == n);
    }
}

#[test]
fn exact_rank_oracle() {
    assert_eq!(exact_rank(&[vec![1, 2], vec![2, 4]]), 1);
    assert_eq!(exact_rank(&[vec![1, 2], vec![3, 4]]), 2);
    assert_eq!(exact_rank(&[vec![0, 0], vec![0, 0]]), 0);
}
