//! Choice of `λ` by generalized cross-validation and of the number of
//! subgroups by a modified BIC.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::data::{LongitudinalDataset, ModelConfig};
use crate::error::{MdspError, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;
use crate::solver::baselines::fit_individualwise;
use crate::solver::primal::Grams;
use crate::solver::{resolve_correlation, FitResult, Problem};

/// Points in the default `λ` grid.
pub const DEFAULT_GRID_POINTS: usize = 30;
/// Lower end of the default grid as a fraction of `λ_max`.
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
/// Default candidate range for the number of subgroups.
pub const DEFAULT_MAX_GROUPS: usize = 5;

/// `q` plus, per covariate, the number of distinct non-zero values in its
/// column. Values count as equal only when bitwise equal.
pub fn degrees_of_freedom<T: Scalar>(beta: &Matrix<T>, q: usize) -> usize {
    let mut df = q;
    for k in 0..beta.cols() {
        let mut vals: Vec<T> = (0..beta.rows())
            .map(|i| beta[(i, k)])
            .filter(|&v| v != T::zero())
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        vals.dedup();
        df += vals.len();
    }
    df
}

/// `RSS / (n_obs − df)²`.
pub fn gcv_value<T: Scalar>(rss: T, df: usize, n_obs: usize) -> Result<T> {
    if df >= n_obs {
        return Err(MdspError::DegenerateDf { df, n_obs });
    }
    let d = T::from_usize(n_obs - df).unwrap();
    Ok(rss / (d * d))
}

/// GCV of a fit on `dataset`.
pub fn gcv<T: Scalar>(fit: &FitResult<T>, dataset: &LongitudinalDataset<T>) -> Result<T> {
    gcv_value(dataset.rss(&fit.alpha, &fit.beta), fit.df, dataset.n_obs())
}

/// Shared-only weighted fit `α̂₀` (all `β = 0`).
fn shared_only_alpha<T: Scalar>(grams: &Grams<T>) -> Result<Vec<T>> {
    if grams.q == 0 {
        return Ok(Vec::new());
    }
    Ok(Cholesky::factor(&grams.zz_total)?.solve(&grams.zy_total))
}

/// `max_{i,k} |X_ikᵀ W (y_i − Z_i α̂₀)|`, with `α̂₀` the shared-only fit.
/// Above it the lasso sets every `β_ik` to zero.
pub fn lambda_max<T: Scalar>(dataset: &LongitudinalDataset<T>, corr: &CorrelationModel<T>) -> Result<T> {
    let grams = Grams::build(dataset, corr);
    let alpha = shared_only_alpha(&grams)?;
    let mut best = T::zero();
    for g in &grams.per {
        for k in 0..grams.p {
            let v = g.xy[k] - dot(g.xz.row(k), &alpha);
            best = best.max(v.abs());
        }
    }
    Ok(best)
}

/// [`DEFAULT_GRID_POINTS`] log-spaced values on
/// `[DEFAULT_GRID_RATIO · λ_max, λ_max]`, ascending.
pub fn default_lambda_grid<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    corr: &CorrelationModel<T>,
) -> Result<Vec<T>> {
    let mut top = lambda_max(dataset, corr)?.to_f64_lossy();
    if !(top > 0.0) {
        top = 1.0;
    }
    Ok(log_grid(top * DEFAULT_GRID_RATIO, top, DEFAULT_GRID_POINTS))
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid<T: Scalar>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::lit(hi)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|j| T::lit((a + (b - a) * j as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Outcome of a `λ` search and, when run, the subgroup-number search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TuningReport<T: Scalar> {
    pub lambda_grid: Vec<T>,
    /// `None` where the fit failed or df reached the sample size.
    pub gcv_values: Vec<Option<T>>,
    pub df_per_lambda: Vec<Option<usize>>,
    pub chosen_lambda: T,
    /// `(λ, message)` of every grid point that failed.
    pub failures: Vec<(T, String)>,
    /// Per covariate, BIC for each candidate `B_k`.
    pub bic_table: Vec<BTreeMap<usize, T>>,
    pub chosen_b: Vec<usize>,
    /// Fits along the path that met the stopping rule.
    #[serde(default)]
    pub fits_converged: usize,
    #[serde(default)]
    pub fits_total: usize,
    /// Augmented-Lagrangian increases summed over the path.
    #[serde(default)]
    pub descent_violations: usize,
}

impl<T: Scalar> TuningReport<T> {
    /// `λ, df, GCV` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,df,gcv\n");
        for (j, l) in self.lambda_grid.iter().enumerate() {
            let df = self.df_per_lambda[j].map(|d| d.to_string()).unwrap_or_default();
            let g = self.gcv_values[j].map(|g| g.to_string()).unwrap_or_default();
            out.push_str(&format!("{l},{df},{g}\n"));
        }
        out
    }
}

/// Fits along an ascending grid, each point warm-started from the previous
/// solution (the first point runs the full restart protocol), and keeps the
/// GCV minimizer; ties go to the larger `λ`. `None` uses the default grid.
pub fn select_lambda<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
    grid: Option<&[T]>,
) -> Result<(TuningReport<T>, FitResult<T>)> {
    let problem = Problem::new(dataset, config)?;
    select_lambda_on(&problem, config, grid)
}

pub fn select_lambda_on<T: Scalar>(
    problem: &Problem<'_, T>,
    config: &ModelConfig<T>,
    grid: Option<&[T]>,
) -> Result<(TuningReport<T>, FitResult<T>)> {
    let dataset = problem.dataset;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_lambda_grid(dataset, &problem.correlation)?,
    };
    if grid.is_empty() {
        return Err(MdspError::InvalidConfig("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|&l| !(l >= T::zero())) {
        return Err(MdspError::InvalidConfig(
            "lambda grid must be non-negative and strictly ascending".into(),
        ));
    }
    let mut report = TuningReport {
        lambda_grid: grid.clone(),
        gcv_values: Vec::with_capacity(grid.len()),
        df_per_lambda: Vec::with_capacity(grid.len()),
        chosen_lambda: grid[0],
        failures: Vec::new(),
        bic_table: Vec::new(),
        chosen_b: Vec::new(),
        fits_converged: 0,
        fits_total: 0,
        descent_violations: 0,
    };
    let mut best: Option<(T, FitResult<T>)> = None;
    let mut prev: Option<FitResult<T>> = None;
    for &lambda in &grid {
        let cfg = config.clone().with_lambda(lambda);
        let init = prev.as_ref().and_then(|f| f.final_state.as_ref());
        let fit = match problem.fit(&cfg, init) {
            Ok(f) => f,
            Err(e) => {
                report.failures.push((lambda, e.to_string()));
                report.gcv_values.push(None);
                report.df_per_lambda.push(None);
                continue;
            }
        };
        report.fits_total += 1;
        report.fits_converged += usize::from(fit.converged);
        report.descent_violations += fit.descent_violations;
        report.df_per_lambda.push(Some(fit.df));
        match gcv_value(fit.rss, fit.df, dataset.n_obs()) {
            Ok(score) => {
                report.gcv_values.push(Some(score));
                if best.as_ref().is_none_or(|(b, _)| score <= *b) {
                    best = Some((score, fit.clone()));
                }
            }
            Err(e) => {
                report.failures.push((lambda, e.to_string()));
                report.gcv_values.push(None);
            }
        }
        prev = Some(fit);
    }
    let Some((_, fit)) = best else {
        let msg = report
            .failures
            .last()
            .map(|(_, m)| m.clone())
            .unwrap_or_default();
        return Err(MdspError::InvalidConfig(format!("no grid point produced a valid fit: {msg}")));
    };
    report.chosen_lambda = fit.lambda;
    Ok((report, fit))
}

/// `2 · ln(ln(p_θ))` with `p_θ = Np + q`.
pub fn bic_multiplier(n: usize, p: usize, q: usize) -> f64 {
    2.0 * ((n * p + q) as f64).ln().ln()
}

/// `ln(RSS/(mN)) + b · ln(mN)/(mN) · (B + q − 1)`.
pub fn bic_formula(rss: f64, n_obs: usize, b: usize, q: usize, multiplier: f64) -> f64 {
    let nm = n_obs as f64;
    (rss / nm).ln() + multiplier * nm.ln() / nm * (b + q - 1) as f64
}

/// Modified BIC for `B` subgroups (zero group included) on covariate `k`.
/// The other heterogeneous covariates are held at their individual-wise
/// estimates; `B = 1` fits no effect at all for covariate `k`, `B ≥ 2` fits
/// the separation model tuned by GCV.
pub fn modified_bic<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    k: usize,
    b: usize,
    config: &ModelConfig<T>,
) -> Result<T> {
    let corr = resolve_correlation(dataset, config.correlation, config.rho)?;
    let fixed = fit_individualwise(dataset, &corr)?.beta;
    bic_on_isolated(dataset, &dataset.isolate_covariate(k, &fixed), &corr, b, config)
}

fn bic_on_isolated<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    isolated: &LongitudinalDataset<T>,
    corr: &CorrelationModel<T>,
    b: usize,
    config: &ModelConfig<T>,
) -> Result<T> {
    if b == 0 {
        return Err(MdspError::InvalidConfig("number of subgroups must be at least 1".into()));
    }
    let (n, p, q) = (dataset.n_individuals(), dataset.p(), dataset.q());
    let rss = if b == 1 {
        let grams = Grams::build(isolated, corr);
        let alpha = shared_only_alpha(&grams)?;
        isolated.rss(&alpha, &Matrix::zeros(n, 1))
    } else {
        let cfg = ModelConfig {
            groups_per_covariate: vec![b],
            sign_constraints: Vec::new(),
            rho: Some(corr.rho()),
            ..config.clone()
        };
        let problem = Problem::with_correlation(isolated, *corr, &cfg)?;
        let (_, fit) = select_lambda_on(&problem, &cfg, None)?;
        fit.rss
    };
    let value = bic_formula(rss.to_f64_lossy(), dataset.n_obs(), b, q, bic_multiplier(n, p, q));
    Ok(T::lit(value))
}

/// BIC table and minimizer (ties to the smaller `B`) for every covariate over
/// `candidates` (default `1..=5`).
pub fn select_groups<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
    candidates: Option<&[usize]>,
) -> Result<TuningReport<T>> {
    let default: Vec<usize> = (1..=DEFAULT_MAX_GROUPS).collect();
    let candidates = candidates.unwrap_or(&default);
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(MdspError::InvalidConfig("group candidates must be non-empty and positive".into()));
    }
    let corr = resolve_correlation(dataset, config.correlation, config.rho)?;
    let fixed = fit_individualwise(dataset, &corr)?.beta;
    let p = dataset.p();
    let jobs: Vec<(usize, usize)> = (0..p)
        .flat_map(|k| candidates.iter().map(move |&b| (k, b)))
        .collect();
    let isolated: Vec<LongitudinalDataset<T>> =
        (0..p).map(|k| dataset.isolate_covariate(k, &fixed)).collect();
    let values: Vec<Result<T>> = jobs
        .par_iter()
        .map(|&(k, b)| bic_on_isolated(dataset, &isolated[k], &corr, b, config))
        .collect();
    let mut table = vec![BTreeMap::new(); p];
    for (&(k, b), v) in jobs.iter().zip(values) {
        table[k].insert(b, v?);
    }
    let chosen_b = table
        .iter()
        .map(|t| {
            t.iter()
                .fold(None, |acc: Option<(usize, T)>, (&b, &v)| match acc {
                    Some((_, bv)) if !(v < bv) => acc,
                    _ => Some((b, v)),
                })
                .map(|(b, _)| b)
                .unwrap_or(1)
        })
        .collect();
    Ok(TuningReport {
        lambda_grid: Vec::new(),
        gcv_values: Vec::new(),
        df_per_lambda: Vec::new(),
        chosen_lambda: T::zero(),
        failures: Vec::new(),
        bic_table: table,
        chosen_b,
        fits_converged: 0,
        fits_total: 0,
        descent_violations: 0,
    })
}
