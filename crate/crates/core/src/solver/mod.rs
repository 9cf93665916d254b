//! ADMM fitting loop, warm starts and restarts.
//!
//! The split problem is
//! `min L(α, β) + S(ν, γ)` subject to `β = ν`, where `L` is the weighted
//! least-squares loss and `S` the separation penalty. Each iteration runs an
//! exact `(α, β)` solve, an exact `(ν, γ)` block update per covariate, and a
//! dual ascent step on `Λ`.

pub mod baselines;
pub mod primal;
pub mod semi_new;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{estimate_rho, CorrelationModel};
use crate::data::{
    CoefficientState, CorrelationKind, KappaScale, LongitudinalDataset, ModelConfig, SignConstraint,
    SubgroupAssignment,
};
use crate::error::{MdspError, Result};
use crate::linalg::{dist2, Matrix};
use crate::penalty::{prox_mdsp, update_column, update_gamma, DirectionSet};
use crate::scalar::Scalar;
use crate::tuning::degrees_of_freedom;

use primal::{solve_face, CellRole, Face, Grams, PrimalSystem};

/// Below this many cells the per-covariate updates run sequentially.
const PARALLEL_CELLS: usize = 2048;
/// Polishing rounds after ADMM terminates.
const POLISH_ROUNDS: usize = 5;

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FitResult<T: Scalar> {
    pub method: String,
    pub lambda: T,
    pub alpha: Vec<T>,
    /// `N × p`.
    pub beta: Matrix<T>,
    pub gamma: Vec<Vec<T>>,
    pub assignment: SubgroupAssignment,
    pub correlation: CorrelationKind,
    pub rho_hat: T,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective at the returned coefficients.
    pub objective: T,
    /// Penalized objective `L(α, ν) + S(ν, γ)` after every iteration.
    pub objective_trace: Vec<T>,
    /// `‖β − ν‖₂` after every iteration.
    pub primal_residual_trace: Vec<T>,
    /// Block updates that increased the augmented Lagrangian.
    pub descent_violations: usize,
    pub max_descent_violation: T,
    /// The exact face re-solve was accepted.
    pub polished: bool,
    pub df: usize,
    /// Unweighted residual sum of squares.
    pub rss: T,
    #[serde(skip)]
    pub final_state: Option<CoefficientState<T>>,
}

impl<T: Scalar> FitResult<T> {
    /// Builds a result for a closed-form estimator with no iterations.
    pub(crate) fn closed_form(
        method: &str,
        dataset: &LongitudinalDataset<T>,
        corr: &CorrelationModel<T>,
        alpha: Vec<T>,
        beta: Matrix<T>,
        gamma: Vec<Vec<T>>,
        objective: T,
    ) -> Self {
        let assignment = SubgroupAssignment::from_coefficients(&beta, &gamma);
        let df = degrees_of_freedom(&beta, alpha.len());
        let rss = dataset.rss(&alpha, &beta);
        Self {
            method: method.to_string(),
            lambda: T::zero(),
            alpha,
            beta,
            gamma,
            assignment,
            correlation: corr.kind(),
            rho_hat: corr.rho(),
            iterations: 0,
            converged: true,
            objective,
            objective_trace: Vec::new(),
            primal_residual_trace: Vec::new(),
            descent_violations: 0,
            max_descent_violation: T::zero(),
            polished: false,
            df,
            rss,
            final_state: None,
        }
    }
}

/// Working correlation for a fit: independence, a fixed `ρ`, or a one-step
/// moment estimate from individual-wise independence residuals.
pub fn resolve_correlation<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    kind: CorrelationKind,
    rho: Option<T>,
) -> Result<CorrelationModel<T>> {
    let m = dataset.measurements();
    match (kind, rho) {
        (CorrelationKind::Independence, _) => Ok(CorrelationModel::independence(m)),
        (kind, Some(rho)) => CorrelationModel::new(kind, rho, m),
        (kind, None) => {
            let ind = CorrelationModel::independence(m);
            let fit = baselines::fit_individualwise(dataset, &ind)?;
            let res = dataset.residuals(&fit.alpha, &fit.beta);
            let rho = estimate_rho(kind, &res)?;
            CorrelationModel::new(kind, rho, m)
        }
    }
}

/// Exact minimizer of `L(α, β) + (κ/2)‖β − ν + Λ/κ‖²`.
pub fn update_primal<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
    corr: &CorrelationModel<T>,
    nu: &Matrix<T>,
    lambda_dual: &Matrix<T>,
) -> Result<(Vec<T>, Matrix<T>)> {
    let grams = Grams::build(dataset, corr);
    let kappa = effective_kappa(config, &grams);
    let system = PrimalSystem::new(&grams, kappa)?;
    Ok(system.solve(&grams, &shift_target(nu, lambda_dual, kappa)))
}

/// The `κ` a fit runs with: `config.kappa` itself, or times the average
/// diagonal of `X_iᵀWX_i` under [`KappaScale::Gram`].
pub fn effective_kappa<T: Scalar>(config: &ModelConfig<T>, grams: &Grams<T>) -> T {
    match config.kappa_scale {
        KappaScale::Absolute => config.kappa,
        KappaScale::Gram => {
            let scale = grams.mean_x_diagonal();
            if scale > T::zero() && scale.is_finite() {
                config.kappa * scale
            } else {
                config.kappa
            }
        }
    }
}

fn shift_target<T: Scalar>(nu: &Matrix<T>, lambda_dual: &Matrix<T>, kappa: T) -> Matrix<T> {
    let data = nu
        .as_slice()
        .iter()
        .zip(lambda_dual.as_slice())
        .map(|(&v, &l)| v - l / kappa)
        .collect();
    Matrix::from_vec(nu.rows(), nu.cols(), data)
}

/// `λ Σ_{i,k} min_d |v_ik − d|`.
pub fn penalty_total<T: Scalar>(v: &Matrix<T>, gamma: &[Vec<T>], lambda: T) -> T {
    if lambda == T::zero() {
        return T::zero();
    }
    let dirs: Vec<DirectionSet<T>> = gamma.iter().map(|g| DirectionSet::new(g)).collect();
    let mut acc = T::zero();
    for i in 0..v.rows() {
        for (k, d) in dirs.iter().enumerate() {
            acc += d.distance(v[(i, k)]);
        }
    }
    lambda * acc
}

/// Penalized objective `L(α, β) + λ Σ min_d |β_ik − d|`.
pub fn penalized_objective<T: Scalar>(
    grams: &Grams<T>,
    alpha: &[T],
    beta: &Matrix<T>,
    gamma: &[Vec<T>],
    lambda: T,
) -> T {
    grams.loss(alpha, beta) + penalty_total(beta, gamma, lambda)
}

fn augmented_lagrangian<T: Scalar>(
    grams: &Grams<T>,
    state: &CoefficientState<T>,
    lambda: T,
    kappa: T,
) -> T {
    let mut acc = grams.loss(&state.alpha, &state.beta) + penalty_total(&state.nu, &state.gamma, lambda);
    let half = T::lit(0.5);
    for ((&b, &v), &l) in state
        .beta
        .as_slice()
        .iter()
        .zip(state.nu.as_slice())
        .zip(state.lambda_dual.as_slice())
    {
        let r = b - v;
        acc += l * r + half * kappa * r * r;
    }
    acc
}

/// A dataset with its working correlation and the factorized primal system.
/// Reusable across fits that share `κ`, e.g. along a `λ` path.
pub struct Problem<'a, T: Scalar> {
    pub dataset: &'a LongitudinalDataset<T>,
    pub correlation: CorrelationModel<T>,
    pub grams: Grams<T>,
    system: PrimalSystem<T>,
}

struct RunOutcome<T: Scalar> {
    state: CoefficientState<T>,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<T>,
    primal_residual_trace: Vec<T>,
    descent_violations: usize,
    max_descent_violation: T,
}

impl<'a, T: Scalar> Problem<'a, T> {
    pub fn new(dataset: &'a LongitudinalDataset<T>, config: &ModelConfig<T>) -> Result<Self> {
        config.validate(dataset.p())?;
        let corr = resolve_correlation(dataset, config.correlation, config.rho)?;
        Self::with_correlation(dataset, corr, config)
    }

    pub fn with_correlation(
        dataset: &'a LongitudinalDataset<T>,
        correlation: CorrelationModel<T>,
        config: &ModelConfig<T>,
    ) -> Result<Self> {
        if correlation.dim() != dataset.measurements() {
            return Err(MdspError::ShapeMismatch(format!(
                "correlation of dimension {} for {} measurements",
                correlation.dim(),
                dataset.measurements()
            )));
        }
        let grams = Grams::build(dataset, &correlation);
        let system = PrimalSystem::new(&grams, effective_kappa(config, &grams))?;
        Ok(Self {
            dataset,
            correlation,
            grams,
            system,
        })
    }

    /// Individual-wise start: `β⁰ = ν⁰` from the unpenalized joint solve,
    /// `Λ⁰ = 0`, and `γ⁰` from the penalty-only search on each `β⁰` column.
    pub fn warm_start(&self, config: &ModelConfig<T>) -> Result<CoefficientState<T>> {
        let (n, p, q) = (self.dataset.n_individuals(), self.dataset.p(), self.dataset.q());
        let unpenalized = PrimalSystem::new(&self.grams, T::zero())?;
        let (alpha, mut beta) = unpenalized.solve(&self.grams, &Matrix::zeros(n, p));
        let ymax = self.dataset.y().iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        let tiny = T::lit(1e-10) * (T::one() + ymax);
        for b in beta.as_mut_slice() {
            if b.abs() < tiny {
                *b = T::zero();
            }
        }
        let groups: Vec<usize> = (0..p).map(|k| config.groups(k)).collect();
        let mut state = CoefficientState::zeros(n, p, q, &groups);
        state.gamma = (0..p)
            .map(|k| initial_gamma(&beta.column(k), &config.constraints_for(k), config))
            .collect();
        state.alpha = alpha;
        state.nu = beta.clone();
        state.beta = beta;
        Ok(state)
    }

    /// Runs the full protocol: the warm start plus `n_restarts` perturbed
    /// starts, keeping the lowest final objective. With `init`, a single run
    /// continues from the given state instead.
    pub fn fit(&self, config: &ModelConfig<T>, init: Option<&CoefficientState<T>>) -> Result<FitResult<T>> {
        config.validate(self.dataset.p())?;
        let own_system;
        let kappa = effective_kappa(config, &self.grams);
        let system = if kappa == self.system.kappa() {
            &self.system
        } else {
            own_system = PrimalSystem::new(&self.grams, kappa)?;
            &own_system
        };
        if let Some(init) = init {
            check_state(init, self.dataset, config)?;
            let run = self.run_admm(system, config, init.clone(), false);
            return Ok(self.finish(config, run, false));
        }
        let start = self.warm_start(config)?;
        let starts: Vec<CoefficientState<T>> = (0..=config.n_restarts)
            .map(|r| {
                if r == 0 {
                    start.clone()
                } else {
                    perturbed(&start, config, r as u64)
                }
            })
            .collect();
        let fits: Vec<FitResult<T>> = starts
            .into_par_iter()
            .map(|s| {
                let run = self.run_admm(system, config, s, false);
                self.finish(config, run, false)
            })
            .collect();
        let mut best: Option<FitResult<T>> = None;
        for f in fits {
            best = match best {
                Some(b) if !(f.objective < b.objective) => Some(b),
                _ => Some(f),
            };
        }
        Ok(best.expect("at least one start"))
    }

    fn run_admm(
        &self,
        system: &PrimalSystem<T>,
        config: &ModelConfig<T>,
        mut state: CoefficientState<T>,
        freeze_gamma: bool,
    ) -> RunOutcome<T> {
        let (n, p, q) = (self.dataset.n_individuals(), self.dataset.p(), self.dataset.q());
        let (lambda, kappa) = (config.lambda, system.kappa());
        let constraints: Vec<Vec<SignConstraint>> = (0..p).map(|k| config.constraints_for(k)).collect();
        let descent_tol = T::lit(1e-9).max(T::lit(100.0) * T::epsilon());
        let parallel = n * p >= PARALLEL_CELLS;
        let np = T::from_usize(n * p).unwrap();
        let qt = T::from_usize(q.max(1)).unwrap();
        let pt = T::from_usize(p).unwrap();

        let mut out = RunOutcome {
            state: state.clone(),
            iterations: 0,
            converged: false,
            objective_trace: Vec::new(),
            primal_residual_trace: Vec::new(),
            descent_violations: 0,
            max_descent_violation: T::zero(),
        };
        let record = |before: T, after: T, out: &mut RunOutcome<T>| {
            let excess = after - before;
            if excess > descent_tol * before.abs().max(T::one()) {
                out.descent_violations += 1;
                out.max_descent_violation = out.max_descent_violation.max(excess);
            }
        };

        for it in 1..=config.max_iterations {
            let prev_beta = state.beta.clone();
            let prev_alpha = state.alpha.clone();
            let prev_gamma = state.gamma_flat();
            let prev_r: Vec<T> = residual(&state);

            let alm0 = augmented_lagrangian(&self.grams, &state, lambda, kappa);
            let (alpha, beta) = system.solve(&self.grams, &shift_target(&state.nu, &state.lambda_dual, kappa));
            state.alpha = alpha;
            state.beta = beta;
            let alm1 = augmented_lagrangian(&self.grams, &state, lambda, kappa);
            record(alm0, alm1, &mut out);

            let column_update = |k: usize, gamma: &mut Vec<T>| -> Vec<T> {
                let u: Vec<T> = (0..n)
                    .map(|i| state.beta[(i, k)] + state.lambda_dual[(i, k)] / kappa)
                    .collect();
                if freeze_gamma {
                    let dirs = DirectionSet::new(gamma);
                    return u.iter().map(|&ui| prox_mdsp(ui, &dirs, lambda, kappa)).collect();
                }
                update_column(
                    &u,
                    gamma,
                    lambda,
                    kappa,
                    &constraints[k],
                    config.gamma_update,
                    config.gamma_grid_resolution,
                )
            };
            let mut gammas = state.gamma.clone();
            let columns: Vec<Vec<T>> = if parallel {
                gammas
                    .par_iter_mut()
                    .enumerate()
                    .map(|(k, g)| column_update(k, g))
                    .collect()
            } else {
                gammas
                    .iter_mut()
                    .enumerate()
                    .map(|(k, g)| column_update(k, g))
                    .collect()
            };
            state.gamma = gammas;
            for (k, col) in columns.iter().enumerate() {
                for (i, &v) in col.iter().enumerate() {
                    state.nu[(i, k)] = v;
                }
            }
            let alm2 = augmented_lagrangian(&self.grams, &state, lambda, kappa);
            record(alm1, alm2, &mut out);

            for ((l, &b), &v) in state
                .lambda_dual
                .as_mut_slice()
                .iter_mut()
                .zip(state.beta.as_slice())
                .zip(state.nu.as_slice())
            {
                *l += kappa * (b - v);
            }

            let r = residual(&state);
            out.objective_trace
                .push(penalized_objective(&self.grams, &state.alpha, &state.nu, &state.gamma, lambda));
            out.primal_residual_trace.push(crate::linalg::norm2(&r));
            out.iterations = it;
            if !state.is_finite() {
                break;
            }

            let mut change = dist2(state.beta.as_slice(), prev_beta.as_slice()) / np
                + dist2(&state.gamma_flat(), &prev_gamma) / pt;
            if q > 0 {
                change += dist2(&state.alpha, &prev_alpha) / qt;
            }
            if change < config.eps_primal && dist2(&r, &prev_r) < config.eps_residual {
                out.converged = true;
                break;
            }
        }
        out.state = state;
        out
    }

    /// Snaps `β` onto `ν`, optionally re-solves the identified face exactly,
    /// and packages the result.
    fn finish(&self, config: &ModelConfig<T>, run: RunOutcome<T>, freeze_gamma: bool) -> FitResult<T> {
        let lambda = config.lambda;
        let mut state = run.state;
        state.beta = state.nu.clone();
        let mut objective = penalized_objective(&self.grams, &state.alpha, &state.beta, &state.gamma, lambda);
        let mut polished = false;
        if config.polish && state.is_finite() {
            for _ in 0..POLISH_ROUNDS {
                let Some((alpha, beta, gamma)) = self.polish_once(config, &state, freeze_gamma) else {
                    break;
                };
                let obj = penalized_objective(&self.grams, &alpha, &beta, &gamma, lambda);
                let slack = T::lit(1e-12) * objective.abs().max(T::one());
                if !(obj <= objective + slack) {
                    break;
                }
                let unchanged = beta == state.beta && alpha == state.alpha && gamma == state.gamma;
                state.alpha = alpha;
                state.nu = beta.clone();
                state.beta = beta;
                state.gamma = gamma;
                objective = obj;
                polished = true;
                if unchanged {
                    break;
                }
            }
        }
        let assignment = SubgroupAssignment::from_coefficients(&state.beta, &state.gamma);
        let df = degrees_of_freedom(&state.beta, self.dataset.q());
        let rss = self.dataset.rss(&state.alpha, &state.beta);
        FitResult {
            method: "mdsp".into(),
            lambda,
            alpha: state.alpha.clone(),
            beta: state.beta.clone(),
            gamma: state.gamma.clone(),
            assignment,
            correlation: self.correlation.kind(),
            rho_hat: self.correlation.rho(),
            iterations: run.iterations,
            converged: run.converged,
            objective,
            objective_trace: run.objective_trace,
            primal_residual_trace: run.primal_residual_trace,
            descent_violations: run.descent_violations,
            max_descent_violation: run.max_descent_violation,
            polished,
            df,
            rss,
            final_state: Some(state),
        }
    }

    /// Runs a single ADMM fit from `start` with the group effects held at
    /// their values in `start`.
    pub fn fit_frozen(&self, config: &ModelConfig<T>, start: CoefficientState<T>) -> Result<FitResult<T>> {
        check_state(&start, self.dataset, config)?;
        let own_system;
        let kappa = effective_kappa(config, &self.grams);
        let system = if kappa == self.system.kappa() {
            &self.system
        } else {
            own_system = PrimalSystem::new(&self.grams, kappa)?;
            &own_system
        };
        let run = self.run_admm(system, config, start, true);
        Ok(self.finish(config, run, true))
    }

    /// Exact minimizer on the face of the penalty containing the snapped
    /// state: zero cells stay zero, cells on a group effect share one free
    /// parameter, remaining cells keep the linear penalty of their nearest
    /// direction. Returns `None` if the face is singular or its solution
    /// leaves the face.
    fn polish_once(
        &self,
        config: &ModelConfig<T>,
        state: &CoefficientState<T>,
        freeze_gamma: bool,
    ) -> Option<(Vec<T>, Matrix<T>, Vec<Vec<T>>)> {
        let (n, p) = (self.dataset.n_individuals(), self.dataset.p());
        let lambda = config.lambda;
        // group parameter index of (k, l), for effects with at least one member
        let mut index: Vec<Vec<Option<usize>>> = state.gamma.iter().map(|g| vec![None; g.len()]).collect();
        let mut owners: Vec<(usize, usize)> = Vec::new();
        let mut roles = vec![vec![CellRole::Free; p]; n];
        let mut free_near: Vec<(usize, usize, Option<(usize, usize)>, T)> = Vec::new();
        for k in 0..p {
            let g = &state.gamma[k];
            for i in 0..n {
                let b = state.beta[(i, k)];
                if b == T::zero() {
                    roles[i][k] = CellRole::Zero;
                    continue;
                }
                if let Some(l) = g.iter().position(|&v| v == b) {
                    if freeze_gamma {
                        roles[i][k] = CellRole::Fixed(b);
                        continue;
                    }
                    let idx = *index[k][l].get_or_insert_with(|| {
                        owners.push((k, l));
                        owners.len() - 1
                    });
                    roles[i][k] = CellRole::Group(idx);
                }
            }
        }
        let mut face = Face::new(roles, owners.len());
        for k in 0..p {
            let dirs = DirectionSet::new(&state.gamma[k]);
            for i in 0..n {
                if face.roles[i][k] != CellRole::Free {
                    continue;
                }
                let b = state.beta[(i, k)];
                let d = dirs.targets()[dirs.nearest(b)];
                let s = if b > d { T::one() } else { -T::one() };
                face.linear_cell[(i, k)] = lambda * s;
                let owner = if d == T::zero() {
                    None
                } else {
                    let l = state.gamma[k].iter().position(|&v| v == d)?;
                    index[k][l].map(|g| (g, l))
                };
                if let Some((g, _)) = owner {
                    face.linear_group[g] -= lambda * s;
                }
                free_near.push((i, k, owner, s));
            }
        }
        let sol = solve_face(&self.grams, &face).ok()?;
        let mut gamma = state.gamma.clone();
        for (g, &(k, l)) in owners.iter().enumerate() {
            let v = sol.groups[g];
            if v == T::zero() || !v.is_finite() || !config.constraint(k, l + 1).admits(v) {
                return None;
            }
            gamma[k][l] = v;
        }
        for (k, gk) in gamma.iter().enumerate() {
            for a in 0..gk.len() {
                for b in 0..a {
                    if gk[a] == gk[b] && index[k][a].is_some() && index[k][b].is_some() {
                        return None;
                    }
                }
            }
        }
        if lambda > T::zero() {
            // free cells must stay strictly on the same side of the same direction
            for &(i, k, owner, s) in &free_near {
                let dirs = DirectionSet::new(&gamma[k]);
                let b = sol.beta[(i, k)];
                let d = match owner {
                    Some((_, l)) => gamma[k][l],
                    None => {
                        let b0 = state.beta[(i, k)];
                        let d0 = DirectionSet::new(&state.gamma[k]);
                        d0.targets()[d0.nearest(b0)]
                    }
                };
                if dirs.hit(b).is_some() || !((b - d) * s > T::zero()) || (dirs.distance(b) < (b - d).abs()) {
                    return None;
                }
            }
        }
        Some((sol.alpha, sol.beta, gamma))
    }
}

fn residual<T: Scalar>(state: &CoefficientState<T>) -> Vec<T> {
    state
        .beta
        .as_slice()
        .iter()
        .zip(state.nu.as_slice())
        .map(|(&b, &v)| b - v)
        .collect()
}

fn check_state<T: Scalar>(
    s: &CoefficientState<T>,
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
) -> Result<()> {
    let (n, p, q) = (dataset.n_individuals(), dataset.p(), dataset.q());
    let shape_ok = s.alpha.len() == q
        && s.beta.rows() == n
        && s.beta.cols() == p
        && s.nu.rows() == n
        && s.nu.cols() == p
        && s.lambda_dual.rows() == n
        && s.lambda_dual.cols() == p
        && s.gamma.len() == p
        && s.gamma.iter().enumerate().all(|(k, g)| g.len() == config.groups(k) - 1);
    if !shape_ok {
        return Err(MdspError::ShapeMismatch("initial state does not match dataset and config".into()));
    }
    if !s.is_finite() {
        return Err(MdspError::InvalidConfig("initial state has non-finite entries".into()));
    }
    Ok(())
}

/// Starting group effects of one covariate: evenly spaced quantiles of the
/// admissible non-zero starting values, refined by the penalty-only search.
fn initial_gamma<T: Scalar>(column: &[T], constraints: &[SignConstraint], config: &ModelConfig<T>) -> Vec<T> {
    let g = constraints.len();
    let max_abs = column.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let mut start = Vec::with_capacity(g);
    let free: Vec<SignConstraint> = vec![SignConstraint::Free; g];
    // group slots sharing one sign requirement split that sign's values
    for (l, &sign) in constraints.iter().enumerate() {
        let mut vals: Vec<T> = column
            .iter()
            .copied()
            .filter(|&v| v != T::zero() && sign.admits(v))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let peers: Vec<usize> = (0..g).filter(|&j| constraints[j] == sign).collect();
        let rank = peers.iter().position(|&j| j == l).unwrap_or(0);
        let v = if vals.is_empty() {
            let fallback = if max_abs > T::zero() { max_abs * T::lit(0.5) } else { T::zero() };
            match sign {
                SignConstraint::Free => fallback,
                SignConstraint::Positive => fallback.max(T::one()),
                SignConstraint::Negative => -fallback.max(T::one()),
            }
        } else {
            let frac = (rank as f64 + 0.5) / peers.len() as f64;
            let pos = ((vals.len() - 1) as f64 * frac).round() as usize;
            vals[pos]
        };
        start.push(v);
    }
    let cons = if constraints.is_empty() { &free[..] } else { constraints };
    update_gamma(column, &start, config.lambda.max(T::one()), cons, config.gamma_grid_resolution).gamma
}

/// Copy of `start` with every group effect moved by `N(0, sd)` noise, `sd`
/// the spread of the starting coefficients of that covariate.
fn perturbed<T: Scalar>(start: &CoefficientState<T>, config: &ModelConfig<T>, stream: u64) -> CoefficientState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut s = start.clone();
    for (k, g) in s.gamma.iter_mut().enumerate() {
        let col = start.beta.column(k);
        let n = T::from_usize(col.len()).unwrap();
        let mean = col.iter().copied().sum::<T>() / n;
        let sd = (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n).sqrt();
        for (l, v) in g.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut cand = *v + sd * T::lit(z);
            match config.constraint(k, l + 1) {
                SignConstraint::Positive => cand = cand.abs(),
                SignConstraint::Negative => cand = -cand.abs(),
                SignConstraint::Free => {}
            }
            *v = cand;
        }
    }
    s
}

/// Fits the model at `config.lambda`; see [`Problem::fit`].
pub fn fit_mdsp<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
    init: Option<&CoefficientState<T>>,
) -> Result<FitResult<T>> {
    Problem::new(dataset, config)?.fit(config, init)
}

/// Warm start of [`Problem::warm_start`] for a given working correlation.
pub fn warm_start<T: Scalar>(
    dataset: &LongitudinalDataset<T>,
    config: &ModelConfig<T>,
    corr: &CorrelationModel<T>,
) -> Result<CoefficientState<T>> {
    Problem::with_correlation(dataset, *corr, config)?.warm_start(config)
}

/// Largest violation of first-order stationarity at a fit: the most negative
/// one-sided directional derivative of the penalized objective along any
/// coordinate of `α`, `β` or `γ`, reported as a non-negative number.
pub fn stationarity_violation<T: Scalar>(grams: &Grams<T>, fit: &FitResult<T>) -> T {
    let lambda = fit.lambda;
    let (gb, ga) = grams.gradient(&fit.alpha, &fit.beta);
    let mut worst = T::zero();
    for &g in &ga {
        worst = worst.max(g.abs());
    }
    let (n, p) = (fit.beta.rows(), fit.beta.cols());
    let one = T::one();
    for k in 0..p {
        let dirs = DirectionSet::new(&fit.gamma[k]);
        let targets = dirs.targets();
        // γ coordinate derivatives accumulate across individuals
        let mut dg_plus = vec![T::zero(); fit.gamma[k].len()];
        let mut dg_minus = vec![T::zero(); fit.gamma[k].len()];
        for i in 0..n {
            let b = fit.beta[(i, k)];
            let dist = dirs.distance(b);
            let active: Vec<T> = targets.iter().copied().filter(|&d| (b - d).abs() == dist).collect();
            let mut plus = T::infinity();
            let mut minus = T::infinity();
            for &d in &active {
                let (dp, dm) = if b == d {
                    (one, one)
                } else {
                    let s = (b - d).signum();
                    (s, -s)
                };
                plus = plus.min(dp);
                minus = minus.min(dm);
            }
            worst = worst.max(-(gb[(i, k)] + lambda * plus));
            worst = worst.max(-(-gb[(i, k)] + lambda * minus));
            for (l, &gamma) in fit.gamma[k].iter().enumerate() {
                // moving γ_l shifts only the pieces centred on it
                let mut plus = T::infinity();
                let mut minus = T::infinity();
                for &d in &active {
                    let (dp, dm) = if d != gamma || d == T::zero() {
                        (T::zero(), T::zero())
                    } else if b == d {
                        (one, one)
                    } else {
                        let s = (b - d).signum();
                        (-s, s)
                    };
                    plus = plus.min(dp);
                    minus = minus.min(dm);
                }
                dg_plus[l] += lambda * plus;
                dg_minus[l] += lambda * minus;
            }
        }
        for l in 0..dg_plus.len() {
            worst = worst.max(-dg_plus[l]).max(-dg_minus[l]);
        }
    }
    worst
}
