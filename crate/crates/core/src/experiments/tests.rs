use super::*;
use crate::mechanisms::MechanismKind;
use crate::network::{ConsensusNoise, Graph, PrivacyScheme};

fn sweep_spec(reps: usize, grid: Vec<f64>) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(Scenario::MechSweep);
    s.reps = reps;
    s.seed = 11;
    s.theta = vec![0.63, 0.81, -0.75, 0.83, 0.26];
    s.sweep = Some(Sweep::Values(grid));
    s
}

fn ring(n: usize) -> GraphSpec {
    GraphSpec::Inline(Graph::cycle(n).unwrap())
}

#[test]
fn linear_grid_has_clean_values() {
    let v = Sweep::parse("0.1:0.1:10").unwrap().values().unwrap();
    assert_eq!(v.len(), 100);
    assert_eq!(v[2], 0.3);
    assert_eq!(v[99], 10.0);
    assert!(Sweep::parse("1:0:2").is_err());
    assert!(Sweep::parse("1:2").is_err());
    assert!(Sweep::Values(vec![0.0]).values().is_err());
}

#[test]
fn log_grid_endpoints() {
    let v = Sweep::Log {
        log: LogGrid {
            start: 0.1,
            stop: 10.0,
            points: 10,
        },
    }
    .values()
    .unwrap();
    assert_eq!(v.len(), 10);
    assert_eq!(v[0], 0.1);
    assert_eq!(v[9], 10.0);
    assert!(v.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn uniform_matrix_is_seeded() {
    let m = MatrixSpec::uniform(-1.0, 1.0, 10, 5, Some(3));
    let a = m.realize(0, 0).unwrap();
    assert_eq!(a, m.realize(99, 0).unwrap());
    assert_ne!(a, m.realize(0, 1).unwrap());
    assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    let json = r#"{"uniform": {"low": -1, "high": 1, "rows": 2, "cols": 2}}"#;
    let parsed: MatrixSpec = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.realize(5, 0).unwrap(), MatrixSpec::uniform(-1.0, 1.0, 2, 2, Some(5)).realize(0, 0).unwrap());
    let explicit: MatrixSpec = serde_json::from_str("[[1, 2], [3, 4]]").unwrap();
    assert_eq!(explicit.realize(0, 0).unwrap()[(1, 0)], 3.0);
    assert!(MatrixSpec::Explicit(vec![vec![1.0], vec![1.0, 2.0]]).realize(0, 0).is_err());
}

#[test]
fn spec_rejects_bad_fields() {
    let mut s = sweep_spec(0, vec![1.0]);
    assert!(matches!(s.validate(), Err(crate::Error::Config { field, .. }) if field == "reps"));
    s.reps = 1;
    s.sweep = Some(Sweep::Values(vec![-1.0]));
    assert!(s.validate().is_err());
    assert!(ExperimentSpec::from_json(r#"{"scenario": "mech_sweep", "bogus": 1}"#).is_err());
    let net = ExperimentSpec::new(Scenario::Offline);
    assert!(matches!(net.validate(), Err(crate::Error::Config { field, .. }) if field == "theta"));
}

#[test]
fn content_hash_tracks_spec() {
    let a = sweep_spec(10, vec![1.0]);
    let mut b = a.clone();
    assert_eq!(a.content_hash(), b.content_hash());
    b.seed += 1;
    assert_ne!(a.content_hash(), b.content_hash());
    assert_eq!(a.content_hash().len(), 64);
}

#[test]
fn gaussian_pair_tracks_bound() {
    let mut spec = sweep_spec(2000, vec![1.0]);
    spec.mechanisms = Some(vec![MechanismKind::GaussianOptimal]);
    let res = run(&spec).unwrap();
    let RunData::MechSweep(rows) = &res.data else { panic!() };
    let r = &rows[0];
    let m = r.mse.unwrap();
    assert!((m.mean - r.ppcr_trace).abs() / r.ppcr_trace < 0.08, "{} vs {}", m.mean, r.ppcr_trace);
}

#[test]
fn sweep_rows_cover_grid() {
    let mut spec = sweep_spec(3, vec![0.5, 2.0]);
    spec.mechanisms = Some(vec![MechanismKind::LaplaceOutput, MechanismKind::Cos2Output, MechanismKind::TwinUniformMult]);
    let res = run(&spec).unwrap();
    let RunData::MechSweep(rows) = &res.data else { panic!() };
    assert_eq!(rows.len(), 6);
    let csv = &res.csv_files()[0].1;
    assert!(csv.starts_with("mechanism,s,mse,stderr,ppcr_trace\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn single_rep_has_no_stderr() {
    let mut spec = sweep_spec(1, vec![1.0]);
    spec.mechanisms = Some(vec![MechanismKind::GaussianOptimal]);
    let res = run(&spec).unwrap();
    let RunData::MechSweep(rows) = &res.data else { panic!() };
    assert!(rows[0].mse.unwrap().stderr.is_none());
    let csv = &res.csv_files()[0].1;
    let line = csv.lines().nth(1).unwrap();
    assert_eq!(line.split(',').nth(3), Some(""));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut spec = sweep_spec(100, vec![0.3, 3.0]);
    spec.mechanisms = Some(vec![MechanismKind::GaussianOptimal, MechanismKind::LaplaceData]);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run(&spec)).unwrap();
    let b = three.install(|| run(&spec)).unwrap();
    assert_eq!(a.csv_files(), b.csv_files());
    assert_eq!(a.meta.result_hash, b.meta.result_hash);
}

#[test]
fn fixed_singular_h_is_not_identifiable() {
    let mut spec = sweep_spec(5, vec![1.0]);
    spec.theta = vec![1.0, 2.0];
    spec.h = Some(MatrixSpec::Explicit(vec![vec![1.0, 1.0], vec![2.0, 2.0]]));
    assert!(matches!(run(&spec), Err(crate::Error::NotIdentifiable)));
}

#[test]
fn unpaired_mechanism_is_a_config_error() {
    let mut spec = sweep_spec(5, vec![1.0]);
    spec.mechanisms = Some(vec![MechanismKind::FoldInadmissible]);
    assert!(matches!(run(&spec), Err(crate::Error::Config { .. })));
}

fn network_spec(scenario: Scenario, graph: GraphSpec, reps: usize) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(scenario);
    s.reps = reps;
    s.seed = 5;
    s.theta = vec![0.36, 0.75];
    s.graph = Some(graph);
    s
}

#[test]
fn offline_complete_graph_converges_in_one_round() {
    let mut spec = network_spec(Scenario::Offline, GraphSpec::Complete { complete: 4 }, 50);
    spec.iterations = Some(3);
    spec.algorithms = Some(vec![PrivacyScheme::Gaussian]);
    let res = run(&spec).unwrap();
    let RunData::Offline(ts) = &res.data else { panic!() };
    let t = &ts[0];
    assert!(t.max_deviation.unwrap() < 1e-10);
    let k1 = t.average_at(1).unwrap().mse.unwrap().mean;
    assert!((k1 - t.central.unwrap().mean).abs() < 1e-10);
    assert!(t.average_at(0).unwrap().mse.is_none());
    assert_eq!(res.csv_files()[0].0, "offline_gaussian.csv");
}

#[test]
fn fixed_singular_network_is_not_identifiable() {
    let mut spec = network_spec(Scenario::Offline, GraphSpec::Complete { complete: 2 }, 2);
    spec.h = Some(MatrixSpec::Explicit(vec![vec![1.0, 1.0], vec![2.0, 2.0]]));
    spec.iterations = Some(1);
    assert!(matches!(run(&spec), Err(crate::Error::NotIdentifiable)));
}

#[test]
fn online_rows_are_scaled_by_k() {
    let mut spec = network_spec(Scenario::Online, ring(4), 20);
    spec.iterations = Some(50);
    spec.checkpoints = Some(vec![10, 50]);
    spec.algorithms = Some(vec![PrivacyScheme::Gaussian, PrivacyScheme::LaplaceOutput]);
    let res = run(&spec).unwrap();
    let RunData::Online(ts) = &res.data else { panic!() };
    assert_eq!(ts.len(), 2);
    assert_eq!(ts[0].rows.len(), 2 * 5);
    let files = res.csv_files();
    assert_eq!(files[1].0, "online_laplace-output.csv");
    assert!(files[0].1.contains("\n50,all,"));
}

#[test]
fn online_init_variants_run() {
    for init in [InitSpec::Zero, InitSpec::LeastSquares, InitSpec::Fixed(vec![0.3, 0.7])] {
        let mut spec = network_spec(Scenario::Online, ring(3), 4);
        spec.iterations = Some(20);
        spec.algorithms = Some(vec![PrivacyScheme::Gaussian]);
        spec.init = Some(init);
        run(&spec).unwrap();
    }
    let mut spec = network_spec(Scenario::Online, ring(3), 4);
    spec.init = Some(InitSpec::Fixed(vec![1.0]));
    assert!(run(&spec).is_err());
}

#[test]
fn default_checkpoints_cover_last_decade() {
    let c = default_checkpoints(10_000);
    for k in [1, 2, 5, 10, 1000, 2000, 9000, 10_000] {
        assert!(c.contains(&k), "{k}");
    }
    assert!(c.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(default_checkpoints(3), vec![1, 2, 3]);
}

#[test]
fn noiseless_consensus_has_zero_variance() {
    let mut spec = network_spec(Scenario::Consensus, ring(5), 10);
    spec.noise = Some(ConsensusNoise::None);
    spec.values = Some(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let res = run(&spec).unwrap();
    let RunData::Consensus(rows) = &res.data else { panic!() };
    assert!(rows.iter().all(|r| r.variance.mean < 1e-20));
    assert!((rows[0].bound - 1.0 / 5.0).abs() < 1e-15);
}

#[test]
fn consensus_matches_bound() {
    let mut spec = network_spec(Scenario::Consensus, ring(4), 4000);
    spec.budgets = Some(vec![1.0, 2.0, 4.0, 8.0]);
    let res = run(&spec).unwrap();
    let RunData::Consensus(rows) = &res.data else { panic!() };
    let last = rows.last().unwrap();
    assert_eq!(last.reps, 4000);
    assert_eq!(rows.len(), 10);
    let se = last.variance.stderr.unwrap();
    assert!((last.variance.mean - last.bound).abs() < 3.0 * se, "{} vs {}", last.variance.mean, last.bound);
}

#[test]
fn check_flags_inadmissible_and_singular() {
    let mut spec = sweep_spec(1, vec![1.0]);
    spec.audit_samples = Some(20_000);
    spec.mechanisms = Some(vec![MechanismKind::GaussianOptimal]);
    assert!(check_scenario(&spec).unwrap().passed());
    spec.audit_samples = None;
    spec.mechanisms = Some(vec![MechanismKind::FoldInadmissible]);
    let rep = check_scenario(&spec).unwrap();
    assert!(!rep.passed(), "{:?}", rep.items);
    assert!(!rep.identifiability_failed());

    let mut net = network_spec(Scenario::Offline, GraphSpec::Complete { complete: 2 }, 1);
    net.h = Some(MatrixSpec::Explicit(vec![vec![1.0, 0.5], vec![1.0, 0.5]]));
    net.audit_samples = Some(1000);
    let rep = check_scenario(&net).unwrap();
    assert!(rep.identifiability_failed());
}

#[test]
fn written_files_and_svg() {
    let dir = std::env::temp_dir().join(format!("ppcr-exp-{}", std::process::id()));
    let mut spec = network_spec(Scenario::Consensus, ring(3), 20);
    spec.iterations = Some(10);
    let res = run(&spec).unwrap();
    let files = res.write_to(&dir, true).unwrap();
    let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["consensus.csv", "consensus.svg", "meta.json"]);
    let svg = std::fs::read_to_string(dir.join("consensus.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta, res.meta);
    std::fs::remove_dir_all(&dir).unwrap();
}
