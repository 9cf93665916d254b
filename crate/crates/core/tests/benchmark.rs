use mdsp::benchmark::{
    generate, preset_table, rmse, run_experiment, run_replication, run_semi_new, selection_metrics, ExperimentSpec,
    Method, PresetTable, Scenario,
};
use mdsp::{CorrelationKind, Matrix};
use proptest::prelude::*;

fn errors(spec: &ExperimentSpec, rep: usize) -> (Vec<f64>, usize, usize) {
    let g = generate(spec, rep).unwrap();
    let ds = &g.dataset;
    let mean = ds.fitted(&g.alpha, &g.beta);
    let eps = ds.y().iter().zip(&mean).map(|(y, mu)| y - mu).collect();
    (eps, ds.n_individuals(), ds.measurements())
}

#[test]
fn generation_is_deterministic() {
    let mut spec = ExperimentSpec::new(Scenario::TwoCovariateCorrelated, 20, 6, vec![1.0, -2.0]);
    spec.seed = 99;
    let a = generate(&spec, 4).unwrap();
    let b = generate(&spec, 4).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_ne!(a.dataset, generate(&spec, 5).unwrap().dataset);
}

#[test]
fn vanishing_sigma_reproduces_the_mean() {
    for scenario in [Scenario::SingleCovariate, Scenario::ThreeGroupMisspec] {
        let mut spec = ExperimentSpec::new(scenario, 12, 5, vec![-3.0, 1.0][..scenario.n_gamma()].to_vec());
        spec.sigma = 1e-12;
        let (eps, _, _) = errors(&spec, 0);
        assert!(eps.iter().all(|e| e.abs() < 1e-9));
    }
}

#[test]
fn ar1_errors_have_the_requested_lag_one_correlation() {
    let mut spec = ExperimentSpec::new(Scenario::SingleCovariate, 500, 20, vec![1.0]);
    spec.error_correlation = CorrelationKind::Ar1;
    spec.rho = 0.5;
    spec.seed = 2;
    let (eps, n, m) = errors(&spec, 0);
    let (mut lag, mut var) = (0.0, 0.0);
    for i in 0..n {
        let e = &eps[i * m..(i + 1) * m];
        var += e.iter().map(|v| v * v).sum::<f64>() / m as f64;
        lag += e.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (m - 1) as f64;
    }
    let r = lag / var;
    assert!((r - 0.5).abs() < 0.03, "lag-1 correlation {r}");
}

#[test]
/// The shared component makes the estimate noisy, hence many individuals.
fn exchangeable_errors_share_the_requested_correlation() {
    let mut spec = ExperimentSpec::new(Scenario::SingleCovariate, 4000, 10, vec![1.0]);
    spec.error_correlation = CorrelationKind::Exchangeable;
    spec.rho = 0.5;
    spec.seed = 3;
    let (eps, n, m) = errors(&spec, 0);
    let (mut cross, mut var) = (0.0, 0.0);
    for i in 0..n {
        let e = &eps[i * m..(i + 1) * m];
        var += e.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let s: f64 = e.iter().sum();
        let ss: f64 = e.iter().map(|v| v * v).sum();
        cross += (s * s - ss) / (m * (m - 1)) as f64;
    }
    let r = cross / var;
    assert!((r - 0.5).abs() < 0.03, "within-individual correlation {r}");
}

#[test]
fn truth_layouts_follow_the_scenarios() {
    let three = ExperimentSpec::new(Scenario::ThreeGroupMisspec, 60, 10, vec![-3.0, 1.0]).beta_truth();
    let col = three.column(0);
    assert_eq!(col.iter().filter(|&&b| b == -3.0).count(), 20);
    assert_eq!(col.iter().filter(|&&b| b == 0.0).count(), 20);
    assert_eq!(col.iter().filter(|&&b| b == 1.0).count(), 20);
    let two = ExperimentSpec::new(Scenario::TwoCovariateCorrelated, 10, 10, vec![1.0, -2.0]).beta_truth();
    for i in 0..10 {
        let want = if i < 5 { [1.0, 0.0] } else { [0.0, -2.0] };
        assert_eq!(two.row(i), &want[..]);
    }
}

#[test]
fn experiment_equals_its_replications_in_any_order() {
    let mut spec = ExperimentSpec::new(Scenario::SingleCovariate, 16, 8, vec![2.0]);
    spec.n_replications = 4;
    spec.seed = 12;
    spec.methods = vec![Method::Mdsp, Method::Sub, Method::Oracle];
    let table = run_experiment(&spec).unwrap();
    let mut sequential = Vec::new();
    for rep in (0..4).rev() {
        sequential.extend(run_replication(&spec, rep).unwrap());
    }
    for rec in &table.records {
        let twin = sequential
            .iter()
            .find(|r| r.replication == rec.replication && r.method == rec.method)
            .unwrap();
        assert_eq!(rec, twin);
    }
    assert_eq!(table, run_experiment(&spec).unwrap());
}

#[test]
fn oracle_is_never_worse_than_individualwise() {
    let mut spec = ExperimentSpec::new(Scenario::SingleCovariate, 40, 10, vec![2.0]);
    spec.n_replications = 10;
    spec.methods = vec![Method::Oracle, Method::Sub, Method::Homo];
    let table = run_experiment(&spec).unwrap();
    let label = spec.label();
    let oracle = table.row(&label, Method::Oracle, None).unwrap();
    let sub = table.row(&label, Method::Sub, None).unwrap();
    let homo = table.row(&label, Method::Homo, None).unwrap();
    assert!(oracle.rmse_mean < sub.rmse_mean && sub.rmse_mean < homo.rmse_mean);
    assert_eq!(oracle.cvsr_mean, 1.0);
    assert!((homo.rmse_mean - 1.0).abs() < 0.05);
}

#[test]
fn semi_new_selection_is_perfect_without_noise() {
    let mut spec = ExperimentSpec::new(Scenario::SemiNew, 40, 10, vec![1.0, -2.0]);
    spec.sigma = 1e-9;
    spec.n_replications = 1;
    spec.n_star = 12;
    spec.m_star = vec![6, 10];
    spec.methods = vec![Method::Mdsp];
    let table = run_semi_new(&spec).unwrap();
    for m in [6, 10] {
        let row = table.row(&spec.label(), Method::Mdsp, Some(m)).unwrap();
        assert_eq!(row.failures, 0);
        assert_eq!(row.cvsr_mean, 1.0, "m* = {m}");
        assert!(row.rmse_mean < 1e-6);
    }
}

#[test]
fn presets_cover_the_standard_designs() {
    let t1 = preset_table(PresetTable::One, 2, 0);
    assert_eq!(t1.len(), 8);
    assert!(t1.iter().all(|s| s.sigma == 1.0 && s.scenario == Scenario::SingleCovariate));
    let t2 = preset_table(PresetTable::Two, 2, 0);
    assert!(t2.iter().all(|s| s.rho == 0.5 && s.gamma_truth == vec![1.0, -2.0]));
    let semi = preset_table(PresetTable::SemiNew, 2, 0);
    assert_eq!(semi[0].n_star, 100);
    assert_eq!(semi[0].m_star, (6..=20).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn metrics_stay_in_range(
        truth in proptest::collection::vec(prop_oneof![Just(0.0f64), Just(2.0)], 1..40),
        hat_seed in proptest::collection::vec(prop_oneof![Just(0.0f64), -3.0f64..3.0], 40),
    ) {
        let n = truth.len();
        let hat = Matrix::from_vec(n, 1, hat_seed[..n].to_vec());
        let t = Matrix::from_vec(n, 1, truth);
        let m = selection_metrics(&hat, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.cvsr));
        for v in [m.sensitivity, m.specificity].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(rmse(&hat, &t).unwrap() >= 0.0);
        prop_assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    }
}
