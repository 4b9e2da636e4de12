use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppcr_core::bounds::{ppcr_bound_gaussian, SensorBlock};
use ppcr_core::experiments::{run, ExperimentSpec, MatrixSpec, Scenario, UniformSpec};
use ppcr_core::fisher::density::ScalarDensity;
use ppcr_core::fisher::quadrature::{fisher_by_quadrature, twin_scale_fisher_by_quadrature};
use ppcr_core::fisher::{fisher_of_noise, twin_scale_fisher, NoiseFamily};
use ppcr_core::network::{metropolis_weights, Graph, OfflinePlan, OnlineOptions, OnlineParams, OnlinePlan, PrivacyScheme};
use ppcr_core::psdlinalg::{PsdMatrix, SymMatrix};
use ppcr_core::{PsdMatrix32, SymMatrix32};

const GRID: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn closed_forms_match_quadrature() {
    for &p in &GRID {
        let fams = [
            NoiseFamily::gaussian_iid(p, 1).unwrap(),
            NoiseFamily::laplace_iid(p, 1).unwrap(),
            NoiseFamily::cauchy_iid(p, 1).unwrap(),
            NoiseFamily::cos2_bounded(-p, p, 1).unwrap(),
        ];
        for f in &fams {
            let closed = fisher_of_noise(f).unwrap().value.as_matrix()[(0, 0)];
            let density = match f {
                NoiseFamily::Gaussian { .. } => ScalarDensity::Gaussian { mean: 0.0, sd: p },
                _ => ScalarDensity::from_family(f).unwrap(),
            };
            let quad = fisher_by_quadrature(&density);
            assert!(rel(quad, closed) < 1e-6, "{} p={p}: {closed} vs {quad}", f.kind_name());
        }
        for &c in GRID.iter().filter(|&&c| c >= p) {
            let closed = twin_scale_fisher(c, p);
            let quad = twin_scale_fisher_by_quadrature(c, p);
            assert!(rel(quad, closed) < 1e-6, "twin c={c} δ={p}: {closed} vs {quad}");
        }
    }
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    // spanning path plus random chords
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut edges: Vec<[usize; 2]> = perm.windows(2).map(|w| [w[0], w[1]]).collect();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.2) && !edges.iter().any(|e| (e[0] == i && e[1] == j) || (e[0] == j && e[1] == i)) {
                edges.push([i, j]);
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

fn random_blocks(rng: &mut ChaCha8Rng, n_s: usize, n: usize) -> Vec<SensorBlock<f64>> {
    (0..n_s)
        .map(|_| {
            let h = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            SensorBlock::new(h, PsdMatrix::from_matrix(&b * b.transpose()).unwrap(), PsdMatrix::scaled_identity(2, 0.04)).unwrap()
        })
        .collect()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymMatrix::new(m.clone()).unwrap().min_eigenvalue()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn consensus_information_stays_psd(seed in any::<u64>(), n_s in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = metropolis_weights::<f64>(&random_connected(&mut rng, n_s)).unwrap();
        let blocks = random_blocks(&mut rng, n_s, 2);
        let off = OfflinePlan::new(&net, &blocks, PrivacyScheme::Gaussian, 30);
        let on = OnlinePlan::new(&net, &blocks, PrivacyScheme::Gaussian, OnlineParams::default(), OnlineOptions::default(), 30);
        if let (Ok(off), Ok(on)) = (off, on) {
            for k in 0..=30 {
                for i in 0..n_s {
                    let scale = off.info(k, i).norm().max(1.0);
                    prop_assert!(min_eig(off.info(k, i)) >= -1e-10 * scale);
                    prop_assert!(min_eig(on.ghat(k, i)) >= -1e-10 * scale);
                }
            }
        }
    }
}

#[test]
fn experiments_reproduce_bit_for_bit() {
    let mut spec = ExperimentSpec::new(Scenario::Offline);
    spec.reps = 40;
    spec.seed = 99;
    spec.theta = vec![0.3, -0.2];
    spec.h = Some(MatrixSpec::Uniform {
        uniform: UniformSpec { low: 0.0, high: 1.0, rows: 6, cols: 2, seed: None },
    });
    spec.graph = Some(ppcr_core::experiments::GraphSpec::Complete { complete: 6 });
    spec.iterations = Some(20);
    let a = run(&spec).unwrap();
    let b = run(&spec).unwrap();
    assert_eq!(a.csv_files(), b.csv_files());
    assert_eq!(a.meta.result_hash, b.meta.result_hash);
}

#[test]
fn core_runs_in_f32() {
    let h64 = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 1.0, -0.3, 0.7]);
    let want = ppcr_bound_gaussian(&h64, &PsdMatrix::scaled_identity(3, 2.0), &PsdMatrix::scaled_identity(3, 0.04))
        .unwrap()
        .sigma_ppcr
        .unwrap()
        .trace();
    let h32 = h64.map(|v| v as f32);
    let got = ppcr_bound_gaussian(&h32, &PsdMatrix32::scaled_identity(3, 2.0), &PsdMatrix32::scaled_identity(3, 0.04))
        .unwrap()
        .sigma_ppcr
        .unwrap()
        .trace();
    assert!(rel(got as f64, want) < 1e-4, "{got} vs {want}");
    let s = SymMatrix32::new(DMatrix::from_row_slice(2, 2, &[2.0f32, 1.0, 1.0, 2.0])).unwrap();
    assert!((s.min_eigenvalue() - 1.0).abs() < 1e-5);
    let _ = DVector::<f32>::zeros(2);
}
