use mdsp::benchmark::{generate, rmse, truth_assignment, ExperimentSpec, Scenario};
use mdsp::solver::baselines::{fit_homogeneous, fit_individualwise, fit_lasso_baseline, fit_oracle};
use mdsp::solver::primal::Grams;
use mdsp::solver::semi_new::fit_semi_new;
use mdsp::solver::{stationarity_violation, update_primal};
use mdsp::tuning::select_lambda;
use mdsp::{fit_mdsp, Config, Correlation, CorrelationKind, Dataset, KappaScale, Matrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize, q: usize) -> Dataset {
    let ids = (0..n).map(|i| i.to_string()).collect();
    let y = normals(rng, n * m);
    let x = normals(rng, n * m * p);
    let z = normals(rng, n * m * q);
    Dataset::new(ids, m, p, q, y, x, z).unwrap()
}

fn spec(n: usize, m: usize, gamma: f64, sigma: f64, seed: u64) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(Scenario::SingleCovariate, n, m, vec![gamma]);
    s.sigma = sigma;
    s.seed = seed;
    s
}

fn absolute(kappa: f64) -> Config {
    Config {
        kappa,
        kappa_scale: KappaScale::Absolute,
        ..Config::default()
    }
}

/// Stacked `(β_1, …, β_N, α)` from the dense normal equations of
/// `½ Σ ‖y_i − X_iβ_i − Z_iα‖²_W + (κ/2)‖β − c‖²`.
fn dense_primal(ds: &Dataset, corr: &Correlation, c: &Matrix<f64>, kappa: f64) -> DVector<f64> {
    let (n, m, p, q) = (ds.n_individuals(), ds.measurements(), ds.p(), ds.q());
    let r = corr.matrix();
    let w = DMatrix::from_fn(m, m, |a, b| r[(a, b)]).try_inverse().unwrap();
    // full design: columns are the N·p individual slots then the q shared ones
    let mut design = DMatrix::<f64>::zeros(n * m, n * p + q);
    let mut weight = DMatrix::<f64>::zeros(n * m, n * m);
    for i in 0..n {
        for t in 0..m {
            for k in 0..p {
                design[(i * m + t, i * p + k)] = ds.x_i(i)[t * p + k];
            }
            for j in 0..q {
                design[(i * m + t, n * p + j)] = ds.z_i(i)[t * q + j];
            }
        }
        weight.view_mut((i * m, i * m), (m, m)).copy_from(&w);
    }
    let y = DVector::from_column_slice(ds.y());
    let mut penalty = DMatrix::<f64>::zeros(n * p + q, n * p + q);
    let mut target = DVector::<f64>::zeros(n * p + q);
    for s in 0..n * p {
        penalty[(s, s)] = kappa;
        target[s] = kappa * c.as_slice()[s];
    }
    let lhs = design.transpose() * &weight * &design + penalty;
    let rhs = design.transpose() * &weight * y + target;
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn primal_update_matches_dense_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = random_dataset(&mut rng, 5, 8, 2, 2);
    let corr = Correlation::new(CorrelationKind::Ar1, 0.4, 8).unwrap();
    let nu = Matrix::from_vec(5, 2, normals(&mut rng, 10));
    let dual = Matrix::from_vec(5, 2, normals(&mut rng, 10));
    let kappa = 1.7;
    let (alpha, beta) = update_primal(&ds, &absolute(kappa), &corr, &nu, &dual).unwrap();
    let c = Matrix::from_vec(5, 2, nu.as_slice().iter().zip(dual.as_slice()).map(|(v, l)| v - l / kappa).collect());
    let dense = dense_primal(&ds, &corr, &c, kappa);
    for (s, v) in beta.as_slice().iter().chain(&alpha).enumerate() {
        assert!((v - dense[s]).abs() < 1e-9, "slot {s}: {v} vs {}", dense[s]);
    }
}

#[test]
fn huge_kappa_pins_beta_and_gives_homogeneous_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ds = random_dataset(&mut rng, 6, 9, 1, 2);
    let corr = Correlation::independence(9);
    let zero = Matrix::zeros(6, 1);
    let (alpha, beta) = update_primal(&ds, &absolute(1e8), &corr, &zero, &zero).unwrap();
    assert!(beta.as_slice().iter().all(|b| b.abs() < 1e-4));
    // least squares on Z alone
    let z = DMatrix::from_row_slice(54, 2, ds.z());
    let y = DVector::from_column_slice(ds.y());
    let want = (z.transpose() * &z).lu().solve(&(z.transpose() * y)).unwrap();
    for j in 0..2 {
        assert!((alpha[j] - want[j]).abs() < 1e-4);
    }
}

#[test]
fn no_shared_covariates_decouples_individuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ds = random_dataset(&mut rng, 4, 7, 2, 0);
    let corr = Correlation::new(CorrelationKind::Exchangeable, 0.3, 7).unwrap();
    let zero = Matrix::zeros(4, 2);
    let (alpha, beta) = update_primal(&ds, &absolute(1e-300), &corr, &zero, &zero).unwrap();
    assert!(alpha.is_empty());
    let r = corr.matrix();
    let w = DMatrix::from_fn(7, 7, |a, b| r[(a, b)]).try_inverse().unwrap();
    for i in 0..4 {
        let x = DMatrix::from_row_slice(7, 2, ds.x_i(i));
        let y = DVector::from_column_slice(ds.y_i(i));
        let gls = (x.transpose() * &w * &x).lu().solve(&(x.transpose() * &w * y)).unwrap();
        for k in 0..2 {
            assert!((beta[(i, k)] - gls[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_lambda_equals_individualwise_gls() {
    let mut s = spec(12, 8, 1.0, 1.0, 5);
    s.error_correlation = CorrelationKind::Exchangeable;
    s.rho = 0.4;
    let ds = generate(&s, 0).unwrap().dataset;
    let cfg = Config {
        correlation: CorrelationKind::Exchangeable,
        rho: Some(0.4),
        ..Config::default()
    };
    let fit = fit_mdsp(&ds, &cfg, None).unwrap();
    let corr = Correlation::new(CorrelationKind::Exchangeable, 0.4, 8).unwrap();
    let sub = fit_individualwise(&ds, &corr).unwrap();
    assert!(fit.beta.max_abs_diff(&sub.beta) < 1e-8);
}

#[test]
fn noisy_fits_descend_stay_feasible_and_are_stationary() {
    for (seed, lambda) in [(1u64, 0.5), (2, 2.0), (3, 6.0)] {
        let ds = generate(&spec(30, 10, 2.0, 1.0, seed), 0).unwrap().dataset;
        let cfg = Config::default().with_lambda(lambda);
        let fit = fit_mdsp(&ds, &cfg, None).unwrap();
        assert!(fit.converged, "seed {seed}");
        assert_eq!(fit.descent_violations, 0, "seed {seed}: {}", fit.max_descent_violation);
        assert!(fit.objective_trace.iter().all(|v| v.is_finite()));
        // β is reported on ν, so labels are exact
        for i in 0..30 {
            let b = fit.beta[(i, 0)];
            match fit.assignment.labels[0][i] {
                Some(0) => assert_eq!(b, 0.0),
                Some(l) => assert_eq!(b, fit.gamma[0][l - 1]),
                None => assert!(b != 0.0 && !fit.gamma[0].contains(&b)),
            }
        }
        let grams = Grams::build(&ds, &Correlation::independence(10));
        let v = stationarity_violation(&grams, &fit);
        assert!(v <= 1e-6, "seed {seed} lambda {lambda}: stationarity violation {v}");
    }
}

#[test]
fn permuting_individuals_permutes_beta() {
    let ds = generate(&spec(24, 10, 2.0, 1.0, 9), 0).unwrap().dataset;
    let perm: Vec<usize> = (0..24).map(|i| (i * 7 + 3) % 24).collect();
    let shuffled = ds.select(&perm);
    let cfg = Config::default().with_lambda(2.0);
    let a = fit_mdsp(&ds, &cfg, None).unwrap();
    let b = fit_mdsp(&shuffled, &cfg, None).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert!((a.beta[(i, 0)] - b.beta[(j, 0)]).abs() < 1e-10);
    }
    for (x, y) in a.alpha.iter().zip(&b.alpha) {
        assert!((x - y).abs() < 1e-10);
    }
    assert_eq!(a.gamma[0].len(), b.gamma[0].len());
    for (x, y) in a.gamma[0].iter().zip(&b.gamma[0]) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn oracle_with_one_group_is_pooled_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ds = random_dataset(&mut rng, 5, 6, 1, 0);
    let labels = mdsp::SubgroupAssignment {
        labels: vec![vec![Some(1); 5]],
    };
    let fit = fit_oracle(&ds, &labels, &Correlation::independence(6)).unwrap();
    let sxy: f64 = ds.x().iter().zip(ds.y()).map(|(x, y)| x * y).sum();
    let sxx: f64 = ds.x().iter().map(|x| x * x).sum();
    assert!((fit.gamma[0][0] - sxy / sxx).abs() < 1e-12);
    assert!(fit.beta.as_slice().iter().all(|&b| b == fit.gamma[0][0]));
}

#[test]
fn oracle_gamma_spread_matches_gls_variance() {
    let s = spec(100, 20, 2.0, 1.0, 31);
    let estimates: Vec<f64> = (0..200)
        .map(|rep| {
            let g = generate(&s, rep).unwrap();
            fit_oracle(&g.dataset, &truth_assignment(&g.beta), &Correlation::independence(20)).unwrap().gamma[0][0]
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64).sqrt();
    let theory = 1.0 / (20.0f64 * 50.0).sqrt();
    assert!((sd / theory - 1.0).abs() < 0.2, "sd {sd} vs {theory}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn oracle_beats_mdsp_beats_individualwise_in_median() {
    let s = spec(40, 10, 2.0, 1.0, 41);
    let corr = Correlation::independence(10);
    let mut gaps = (Vec::new(), Vec::new());
    for rep in 0..30 {
        let g = generate(&s, rep).unwrap();
        let (_, fit) = select_lambda(&g.dataset, &Config::default(), None).unwrap();
        let oracle = fit_oracle(&g.dataset, &truth_assignment(&g.beta), &corr).unwrap();
        let sub = fit_individualwise(&g.dataset, &corr).unwrap();
        let r = |b: &Matrix<f64>| rmse(b, &g.beta).unwrap();
        gaps.0.push(r(&fit.beta) - r(&oracle.beta));
        gaps.1.push(r(&sub.beta) - r(&fit.beta));
    }
    assert!(median(gaps.0) >= 0.0);
    assert!(median(gaps.1) >= 0.0);
}

#[test]
fn homogeneous_fit_approaches_half_gamma() {
    let s = spec(100, 20, 2.0, 1.0, 51);
    let g = generate(&s, 0).unwrap();
    let homo = fit_homogeneous(&g.dataset, &Correlation::independence(20)).unwrap();
    let r = rmse(&homo.beta, &g.beta).unwrap();
    assert!((r - 1.0).abs() < 0.02, "{r}");
}

#[test]
fn lasso_sits_between_mdsp_and_individualwise() {
    let s = spec(100, 10, 1.0, 1.0, 61);
    let corr = Correlation::independence(10);
    let reps = 20;
    let mut sums = [0.0; 3];
    for rep in 0..reps {
        let g = generate(&s, rep).unwrap();
        let (_, fit) = select_lambda(&g.dataset, &Config::default(), None).unwrap();
        let lasso = fit_lasso_baseline(&g.dataset, None).unwrap();
        let sub = fit_individualwise(&g.dataset, &corr).unwrap();
        for (acc, b) in sums.iter_mut().zip([&fit.beta, &lasso.beta, &sub.beta]) {
            *acc += rmse(b, &g.beta).unwrap() / reps as f64;
        }
    }
    let [mdsp, lasso, sub] = sums;
    eprintln!("mdsp {mdsp:.4} lasso {lasso:.4} sub {sub:.4}");
    assert!(mdsp < lasso && lasso < sub, "mdsp {mdsp} lasso {lasso} sub {sub}");
}

#[test]
fn semi_new_noiseless_selection_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let gamma = vec![vec![1.0], vec![-2.0]];
    for truth in [[0.0, 0.0], [1.0, 0.0], [0.0, -2.0], [1.0, -2.0]] {
        let m = 8;
        let x = normals(&mut rng, m * 2);
        let z: Vec<f64> = (0..m).flat_map(|_| [1.0, rng.sample(StandardNormal)]).collect();
        let y: Vec<f64> = (0..m)
            .map(|t| x[2 * t] * truth[0] + x[2 * t + 1] * truth[1] + z[2 * t] + z[2 * t + 1])
            .collect();
        let ds = Dataset::new(vec!["new".into()], m, 2, 2, y, x, z).unwrap();
        let fit = fit_semi_new(&ds, &gamma, 0.5).unwrap();
        assert_eq!(fit.beta.row(0), &truth[..], "truth {truth:?}");
    }
}
