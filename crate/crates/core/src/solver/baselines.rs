//! Reference estimators: individual-wise, homogeneous, oracle and lasso.

use crate::correlation::CorrelationModel;
use crate::data::{LongitudinalDataset, SubgroupAssignment};
use crate::error::{MdspError, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;
use crate::tuning::{default_lambda_grid, gcv_value};

use super::primal::{solve_face, CellRole, Face, Grams, PrimalSystem};
use super::FitResult;

/// Coordinate-descent sweeps before the lasso gives up.
pub const LASSO_MAX_SWEEPS: usize = 10_000;
/// Largest coefficient change, relative to the coefficient scale, that ends
/// the lasso sweeps.
pub const LASSO_TOL: f64 = 1e-10;

/// Unpenalized joint fit: every individual keeps its own `β_i`, `α` shared.
pub fn fit_individualwise<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    corr: &CorrelationModel<T>,
) -> Result<FitResult<T>> {
    let grams = Grams::build(dataset, corr);
    let system = PrimalSystem::new(&grams, T::zero())?;
    let (n, p) = (dataset.n_individuals(), dataset.p());
    let (alpha, beta) = system.solve(&grams, &Matrix::zeros(n, p));
    let obj = grams.loss(&alpha, &beta);
    Ok(FitResult::closed_form("sub", dataset, corr, alpha, beta, vec![Vec::new(); p], obj))
}

/// One coefficient vector shared by every individual.
pub fn fit_homogeneous<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    corr: &CorrelationModel<T>,
) -> Result<FitResult<T>> {
    let (n, p) = (dataset.n_individuals(), dataset.p());
    let roles = vec![(0..p).map(CellRole::Group).collect::<Vec<_>>(); n];
    let grams = Grams::build(dataset, corr);
    let sol = solve_face(&grams, &Face::new(roles, p))?;
    let obj = grams.loss(&sol.alpha, &sol.beta);
    let gamma = sol.groups.iter().map(|&g| vec![g]).collect();
    Ok(FitResult::closed_form("homo", dataset, corr, sol.alpha, sol.beta, gamma, obj))
}

/// Weighted least squares with the subgroup structure given: cells labelled
/// 0 are fixed at zero, cells sharing a label share one effect, unlabelled
/// cells are estimated individually.
pub fn fit_oracle<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    assignment: &SubgroupAssignment,
    corr: &CorrelationModel<T>,
) -> Result<FitResult<T>> {
    let (n, p) = (dataset.n_individuals(), dataset.p());
    if assignment.labels.len() != p || assignment.labels.iter().any(|c| c.len() != n) {
        return Err(MdspError::ShapeMismatch(format!(
            "assignment is not {p} covariates by {n} individuals"
        )));
    }
    let mut owners: Vec<(usize, usize)> = Vec::new();
    let mut roles = vec![vec![CellRole::Free; p]; n];
    for (k, col) in assignment.labels.iter().enumerate() {
        for (i, label) in col.iter().enumerate() {
            roles[i][k] = match label {
                Some(0) => CellRole::Zero,
                Some(l) => {
                    let idx = owners.iter().position(|&o| o == (k, *l)).unwrap_or_else(|| {
                        owners.push((k, *l));
                        owners.len() - 1
                    });
                    CellRole::Group(idx)
                }
                None => CellRole::Free,
            };
        }
    }
    let grams = Grams::build(dataset, corr);
    let sol = solve_face(&grams, &Face::new(roles, owners.len()))?;
    let mut gamma: Vec<Vec<T>> = assignment
        .labels
        .iter()
        .map(|col| vec![T::zero(); col.iter().flatten().copied().max().unwrap_or(0)])
        .collect();
    for (g, &(k, l)) in owners.iter().enumerate() {
        gamma[k][l - 1] = sol.groups[g];
    }
    let obj = grams.loss(&sol.alpha, &sol.beta);
    let mut fit = FitResult::closed_form("oracle", dataset, corr, sol.alpha, sol.beta, gamma, obj);
    fit.assignment = assignment.clone();
    Ok(fit)
}

/// Lasso `½‖y − Xβ − Zα‖² + λ Σ|β_ik|` with `α` unpenalized, by cyclic
/// coordinate descent over individuals and exact `α` updates. Working
/// correlation is independence.
pub fn fit_lasso<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    lambda: T,
    init: Option<(&[T], &Matrix<T>)>,
) -> Result<FitResult<T>> {
    let corr = CorrelationModel::independence(dataset.measurements());
    let grams = Grams::build(dataset, &corr);
    lasso_on_grams(dataset, &corr, &grams, lambda, init)
}

fn lasso_on_grams<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    corr: &CorrelationModel<T>,
    grams: &Grams<T>,
    lambda: T,
    init: Option<(&[T], &Matrix<T>)>,
) -> Result<FitResult<T>> {
    let (n, p, q) = (dataset.n_individuals(), dataset.p(), dataset.q());
    let zz = if q > 0 { Some(Cholesky::factor(&grams.zz_total)?) } else { None };
    let (mut alpha, mut beta) = match init {
        Some((a, b)) => (a.to_vec(), b.clone()),
        None => (vec![T::zero(); q], Matrix::zeros(n, p)),
    };
    let tol = T::lit(LASSO_TOL);
    let mut sweeps = 0;
    let mut done = false;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = T::zero();
        let mut scale = T::zero();
        for (i, g) in grams.per.iter().enumerate() {
            let xza = g.xz.mul_vec(&alpha);
            for k in 0..p {
                let hkk = g.xx[(k, k)];
                if !(hkk > T::zero()) {
                    beta[(i, k)] = T::zero();
                    continue;
                }
                let old = beta[(i, k)];
                let grad = dot(g.xx.row(k), beta.row(i)) + xza[k] - g.xy[k];
                let z = hkk * old - grad;
                let new = crate::penalty::soft_threshold(z, lambda) / hkk;
                beta[(i, k)] = new;
                max_change = max_change.max((new - old).abs());
                scale = scale.max(new.abs());
            }
        }
        if let Some(chol) = &zz {
            let mut rhs = grams.zy_total.clone();
            for (i, g) in grams.per.iter().enumerate() {
                let back = g.xz.tr_mul_vec(beta.row(i));
                for j in 0..q {
                    rhs[j] -= back[j];
                }
            }
            chol.solve_in_place(&mut rhs);
            for (a, &r) in alpha.iter_mut().zip(&rhs) {
                max_change = max_change.max((*a - r).abs());
                scale = scale.max(r.abs());
                *a = r;
            }
        }
        if max_change <= tol * scale.max(T::one()) {
            done = true;
            break;
        }
    }
    if !done {
        return Err(MdspError::NoConvergence(sweeps));
    }
    let obj = grams.loss(&alpha, &beta)
        + lambda * beta.as_slice().iter().map(|v| v.abs()).sum::<T>();
    let mut fit = FitResult::closed_form("lasso", dataset, corr, alpha, beta, vec![Vec::new(); p], obj);
    fit.lambda = lambda;
    fit.iterations = sweeps;
    fit.df = q + fit.beta.as_slice().iter().filter(|&&v| v != T::zero()).count();
    Ok(fit)
}

/// Lasso tuned by GCV with `df = q + (number of non-zero β_ik)`, fitted along
/// an ascending grid with warm starts. Ties go to the larger `λ`. `grid`
/// defaults to the standard log-spaced grid.
pub fn fit_lasso_baseline<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    lambda_grid: Option<&[T]>,
) -> Result<FitResult<T>> {
    let corr = CorrelationModel::independence(dataset.measurements());
    let grams = Grams::build(dataset, &corr);
    let grid = match lambda_grid {
        Some(g) => g.to_vec(),
        None => default_lambda_grid(dataset, &corr)?,
    };
    if grid.is_empty() {
        return Err(MdspError::InvalidConfig("empty lambda grid".into()));
    }
    let mut best: Option<(T, FitResult<T>)> = None;
    let mut prev: Option<FitResult<T>> = None;
    let mut last_err = None;
    for &lambda in &grid {
        let init = prev.as_ref().map(|f| (f.alpha.as_slice(), &f.beta));
        let fit = match lasso_on_grams(dataset, &corr, &grams, lambda, init) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        if let Ok(score) = gcv_value(fit.rss, fit.df, dataset.n_obs()) {
            if best.as_ref().is_none_or(|(b, _)| score <= *b) {
                best = Some((score, fit.clone()));
            }
        }
        prev = Some(fit);
    }
    match best {
        Some((_, fit)) => Ok(fit),
        None => Err(last_err.unwrap_or(MdspError::DegenerateDf {
            df: dataset.n_obs(),
            n_obs: dataset.n_obs(),
        })),
    }
}
