//! Fits for a single new individual given group effects from a training fit.
//!
//! The individual gets its own shared-covariate coefficients `α*`; the group
//! effects `γ̂` only enter through the penalty and stay fixed.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::correlation::CorrelationModel;
use crate::data::{CoefficientState, LongitudinalDataset, ModelConfig};
use crate::error::{MdspError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::penalty::DirectionSet;
use crate::scalar::Scalar;
use crate::tuning::{default_lambda_grid, gcv_value};

use super::primal::{Grams, PrimalSystem};
use super::{FitResult, Problem};

/// Largest number of direction combinations tried as starts.
const MAX_DIRECTION_STARTS: usize = 256;

fn check_single<T: Scalar>(ds: &LongitudinalDataset<T>, gamma_hat: Option<&[Vec<T>]>) -> Result<()> {
    if ds.n_individuals() != 1 {
        return Err(MdspError::InvalidDataset(format!(
            "expected one individual, got {}",
            ds.n_individuals()
        )));
    }
    if let Some(g) = gamma_hat {
        if g.len() != ds.p() || g.iter().any(Vec::is_empty) {
            return Err(MdspError::ShapeMismatch(format!(
                "group effects for {} covariates, data has {}",
                g.len(),
                ds.p()
            )));
        }
    }
    Ok(())
}

/// Minimizes `½‖y* − X*β* − Z*α*‖² + λ* Σ_k min_{d ∈ {0, γ̂_k}} |β*_k − d|`
/// by ADMM with `γ̂` frozen. Starts from least squares, its snap onto the
/// nearest directions, and every combination of directions (or just zero
/// when there are more than 256); keeps the best.
pub fn fit_semi_new<T: Scalar>(
    individual: &LongitudinalDataset<T>,
    gamma_hat: &[Vec<T>],
    lambda_star: T,
) -> Result<FitResult<T>> {
    check_single(individual, Some(gamma_hat))?;
    let (p, q, m) = (individual.p(), individual.q(), individual.measurements());
    let config = ModelConfig {
        lambda: lambda_star,
        groups_per_covariate: gamma_hat.iter().map(|g| g.len() + 1).collect(),
        n_restarts: 0,
        ..ModelConfig::default()
    };
    let corr = CorrelationModel::independence(m);
    let problem = Problem::with_correlation(individual, corr, &config)?;

    let groups = config.groups_per_covariate.clone();
    let mut base = CoefficientState::zeros(1, p, q, &groups);
    base.gamma = gamma_hat.to_vec();
    let mut starts = Vec::new();
    match PrimalSystem::new(&problem.grams, T::zero()) {
        Ok(sys) => {
            let (alpha, beta) = sys.solve(&problem.grams, &Matrix::zeros(1, p));
            let mut s = base.clone();
            s.alpha = alpha.clone();
            s.beta = beta.clone();
            s.nu = beta.clone();
            starts.push(s);
            let mut snapped = beta.clone();
            for k in 0..p {
                let dirs = DirectionSet::new(&gamma_hat[k]);
                snapped[(0, k)] = dirs.targets()[dirs.nearest(beta[(0, k)])];
            }
            let mut s = base.clone();
            s.alpha = alpha;
            s.beta = snapped.clone();
            s.nu = snapped;
            starts.push(s);
        }
        Err(_) => starts.push(base.clone()),
    }
    let (alpha0, _) = problem.system_solve_zero();
    let combos: usize = gamma_hat.iter().map(|g| g.len() + 1).product();
    if combos <= MAX_DIRECTION_STARTS {
        for mut code in 0..combos {
            let mut s = base.clone();
            s.alpha = alpha0.clone();
            for k in 0..p {
                let b = gamma_hat[k].len() + 1;
                let pick = code % b;
                code /= b;
                let d = if pick == 0 { T::zero() } else { gamma_hat[k][pick - 1] };
                s.beta[(0, k)] = d;
                s.nu[(0, k)] = d;
            }
            starts.push(s);
        }
    } else {
        let mut zero = base;
        zero.alpha = alpha0;
        starts.push(zero);
    }

    let mut best: Option<FitResult<T>> = None;
    for s in starts {
        let mut fit = problem.fit_frozen(&config, s)?;
        fit.method = "mdsp".into();
        fit.df = semi_new_df(&fit.beta, gamma_hat, q);
        best = match best {
            Some(b) if !(fit.objective < b.objective) => Some(b),
            _ => Some(fit),
        };
    }
    Ok(best.expect("at least one start"))
}

/// Degrees of freedom of a frozen-direction fit: `q` plus the number of
/// distinct non-zero coefficients that sit on no direction.
pub fn semi_new_df<T: Scalar>(beta: &Matrix<T>, gamma_hat: &[Vec<T>], q: usize) -> usize {
    let mut df = q;
    for k in 0..beta.cols() {
        let dirs = DirectionSet::new(&gamma_hat[k]);
        let mut seen: Vec<T> = Vec::new();
        for i in 0..beta.rows() {
            let b = beta[(i, k)];
            if dirs.hit(b).is_none() && !seen.contains(&b) {
                seen.push(b);
            }
        }
        df += seen.len();
    }
    df
}

/// [`fit_semi_new`] with `λ*` chosen by GCV over `grid` (default: the
/// standard grid on this individual's data). Ties go to the larger `λ*`.
pub fn tune_semi_new<T: Scalar>(
    individual: &LongitudinalDataset<T>,
    gamma_hat: &[Vec<T>],
    grid: Option<&[T]>,
) -> Result<FitResult<T>> {
    check_single(individual, Some(gamma_hat))?;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_lambda_grid(individual, &CorrelationModel::independence(individual.measurements()))?,
    };
    let mut best: Option<(T, FitResult<T>)> = None;
    let mut last_err = None;
    for &lambda in &grid {
        let fit = match fit_semi_new(individual, gamma_hat, lambda) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match gcv_value(fit.rss, fit.df, individual.n_obs()) {
            Ok(score) => {
                if best.as_ref().is_none_or(|(b, _)| score <= *b) {
                    best = Some((score, fit));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| {
        last_err.unwrap_or_else(|| MdspError::InvalidConfig("empty lambda grid".into()))
    })
}

/// Fits several new individuals at one common `λ*` chosen by pooled GCV,
/// `Σ RSS / (Σ m_i − Σ df_i)²`, over `grid` (default: the standard grid of
/// the stacked individuals). Ties go to the larger `λ*`. Returns the chosen
/// value and one fit per individual.
pub fn tune_semi_new_batch<T: Scalar>(
    individuals: &[LongitudinalDataset<T>],
    gamma_hat: &[Vec<T>],
    grid: Option<&[T]>,
) -> Result<(T, Vec<FitResult<T>>)> {
    if individuals.is_empty() {
        return Err(MdspError::InvalidDataset("no new individuals".into()));
    }
    for ind in individuals {
        check_single(ind, Some(gamma_hat))?;
    }
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => {
            let stacked = stack(individuals)?;
            default_lambda_grid(&stacked, &CorrelationModel::independence(stacked.measurements()))?
        }
    };
    let n_obs: usize = individuals.iter().map(|d| d.n_obs()).sum();
    let mut best: Option<(T, T, Vec<FitResult<T>>)> = None;
    let mut last_err = None;
    for &lambda in &grid {
        let fits: Result<Vec<FitResult<T>>> = individuals
            .par_iter()
            .map(|ind| fit_semi_new(ind, gamma_hat, lambda))
            .collect();
        let fits = match fits {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let rss = fits.iter().fold(T::zero(), |a, f| a + f.rss);
        let df: usize = fits.iter().map(|f| f.df).sum();
        match gcv_value(rss, df, n_obs) {
            Ok(score) => {
                if best.as_ref().is_none_or(|(b, _, _)| score <= *b) {
                    best = Some((score, lambda, fits));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, l, f)| (l, f)).ok_or_else(|| {
        last_err.unwrap_or_else(|| MdspError::InvalidConfig("empty lambda grid".into()))
    })
}

/// Stacks single-individual datasets with a common `m` into one.
fn stack<T: Scalar>(individuals: &[LongitudinalDataset<T>]) -> Result<LongitudinalDataset<T>> {
    let first = &individuals[0];
    let (m, p, q) = (first.measurements(), first.p(), first.q());
    if individuals.iter().any(|d| d.measurements() != m || d.p() != p || d.q() != q) {
        return Err(MdspError::ShapeMismatch("new individuals differ in shape".into()));
    }
    let ids = (0..individuals.len()).map(|i| i.to_string()).collect();
    let y = individuals.iter().flat_map(|d| d.y().to_vec()).collect();
    let x = individuals.iter().flat_map(|d| d.x().to_vec()).collect();
    let z = individuals.iter().flat_map(|d| d.z().to_vec()).collect();
    LongitudinalDataset::new(ids, m, p, q, y, x, z)
}

/// Least-squares fit of one individual with two-sided t-test p-values for the
/// heterogeneous covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit<T> {
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
    pub p_values: Vec<T>,
    /// `p_value < level`.
    pub selected: Vec<bool>,
}

pub fn fit_ols_individual<T: Scalar>(individual: &LongitudinalDataset<T>, level: f64) -> Result<OlsFit<T>> {
    check_single(individual, None)?;
    let (p, q, m) = (individual.p(), individual.q(), individual.measurements());
    let d = p + q;
    if m <= d {
        return Err(MdspError::DegenerateDf { df: d, n_obs: m });
    }
    let grams = Grams::build(individual, &CorrelationModel::independence(m));
    let g = &grams.per[0];
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![T::zero(); d];
    for a in 0..p {
        rhs[a] = g.xy[a];
        for b in 0..p {
            gram[(a, b)] = g.xx[(a, b)];
        }
        for j in 0..q {
            gram[(a, p + j)] = g.xz[(a, j)];
            gram[(p + j, a)] = g.xz[(a, j)];
        }
    }
    for j in 0..q {
        rhs[p + j] = g.zy[j];
        for l in 0..q {
            gram[(p + j, p + l)] = g.zz[(j, l)];
        }
    }
    let chol = Cholesky::factor(&gram)?;
    let coef = chol.solve(&rhs);
    let beta = Matrix::from_vec(1, p, coef[..p].to_vec());
    let alpha = coef[p..].to_vec();
    let rss = individual.rss(&alpha, &beta);
    let dof = m - d;
    let s2 = rss / T::from_usize(dof).unwrap();
    let t_dist = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| MdspError::InvalidConfig(format!("t distribution: {e}")))?;
    let mut p_values = Vec::with_capacity(p);
    for k in 0..p {
        let mut e = vec![T::zero(); d];
        e[k] = T::one();
        let var = s2 * chol.solve(&e)[k];
        let t = if var > T::zero() {
            (coef[k] / var.sqrt()).to_f64_lossy().abs()
        } else {
            f64::INFINITY
        };
        p_values.push(T::lit(2.0 * (1.0 - t_dist.cdf(t))));
    }
    let selected = p_values.iter().map(|&pv| pv.to_f64_lossy() < level).collect();
    Ok(OlsFit {
        alpha,
        beta: beta.row(0).to_vec(),
        p_values,
        selected,
    })
}

impl<T: Scalar> Problem<'_, T> {
    /// `α` of the shared-only fit (`β = 0`).
    fn system_solve_zero(&self) -> (Vec<T>, Matrix<T>) {
        let (n, p, q) = (self.dataset.n_individuals(), self.dataset.p(), self.dataset.q());
        let beta = Matrix::zeros(n, p);
        if q == 0 {
            return (Vec::new(), beta);
        }
        let alpha = Cholesky::factor(&self.grams.zz_total)
            .map(|c| c.solve(&self.grams.zy_total))
            .unwrap_or_else(|_| vec![T::zero(); q]);
        (alpha, beta)
    }
}
