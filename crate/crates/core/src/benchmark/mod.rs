//! Simulation scenarios, evaluation metrics and the Monte-Carlo runner.
//!
//! Every scenario uses `q = 3` shared covariates: an intercept and two
//! standard-normal columns, all with coefficient 1. Heterogeneous covariates
//! are standard normal; errors are `σ · L ξ` with `L Lᵀ = R(ρ)`.

mod presets;
mod runner;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::data::{CorrelationKind, LongitudinalDataset, ModelConfig, SubgroupAssignment};
use crate::error::{MdspError, Result};
use crate::linalg::{Cholesky, Matrix};

pub use presets::{preset_table, PresetTable};
pub use runner::{
    run_experiment, run_replication, run_semi_new, MethodOutcome, MetricsRow, MetricsTable,
    ReplicationRecord,
};

/// Shared-covariate coefficients of every scenario.
pub const ALPHA_TRUTH: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One heterogeneous covariate, first half `γ`, second half zero.
    SingleCovariate,
    /// Two covariates with complementary halves `(γ₁, 0)` and `(0, γ₂)`.
    TwoCovariateCorrelated,
    /// One covariate, every individual at `γ`.
    HomogeneousMisspec,
    /// One covariate, thirds at `γ₁`, `0`, `γ₂`.
    ThreeGroupMisspec,
    /// Training set as in `TwoCovariateCorrelated`, then new individuals
    /// with independent Bernoulli(1/2) effects.
    SemiNew,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::SingleCovariate,
        Scenario::TwoCovariateCorrelated,
        Scenario::HomogeneousMisspec,
        Scenario::ThreeGroupMisspec,
        Scenario::SemiNew,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SingleCovariate => "single_covariate",
            Scenario::TwoCovariateCorrelated => "two_covariate_correlated",
            Scenario::HomogeneousMisspec => "homogeneous_misspec",
            Scenario::ThreeGroupMisspec => "three_group_misspec",
            Scenario::SemiNew => "semi_new",
        }
    }

    /// Heterogeneous covariates.
    pub fn p(self) -> usize {
        match self {
            Scenario::TwoCovariateCorrelated | Scenario::SemiNew => 2,
            _ => 1,
        }
    }

    /// Expected length of `gamma_truth`.
    pub fn n_gamma(self) -> usize {
        match self {
            Scenario::SingleCovariate | Scenario::HomogeneousMisspec => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = MdspError;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                MdspError::InvalidConfig(format!(
                    "unknown scenario `{s}`; valid scenarios: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Estimators the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Separation penalty with the spec's working correlation.
    #[serde(rename = "mdsp")]
    Mdsp,
    #[serde(rename = "mdsp-ind")]
    MdspInd,
    #[serde(rename = "mdsp-exch")]
    MdspExch,
    #[serde(rename = "mdsp-ar1")]
    MdspAr1,
    /// Individual-wise least squares.
    #[serde(rename = "sub")]
    Sub,
    #[serde(rename = "homo")]
    Homo,
    /// Least squares with the true subgroups.
    #[serde(rename = "oracle")]
    Oracle,
    #[serde(rename = "lasso")]
    Lasso,
    /// Least squares with p-value selection (new individuals only).
    #[serde(rename = "ols")]
    Ols,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Mdsp,
        Method::MdspInd,
        Method::MdspExch,
        Method::MdspAr1,
        Method::Sub,
        Method::Homo,
        Method::Oracle,
        Method::Lasso,
        Method::Ols,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mdsp => "mdsp",
            Method::MdspInd => "mdsp-ind",
            Method::MdspExch => "mdsp-exch",
            Method::MdspAr1 => "mdsp-ar1",
            Method::Sub => "sub",
            Method::Homo => "homo",
            Method::Oracle => "oracle",
            Method::Lasso => "lasso",
            Method::Ols => "ols",
        }
    }

    /// Working correlation of the separation-penalty variants.
    pub fn working_correlation(self, default: CorrelationKind) -> Option<CorrelationKind> {
        match self {
            Method::Mdsp => Some(default),
            Method::MdspInd => Some(CorrelationKind::Independence),
            Method::MdspExch => Some(CorrelationKind::Exchangeable),
            Method::MdspAr1 => Some(CorrelationKind::Ar1),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MdspError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| MdspError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mdsp, Method::Sub, Method::Homo]
}

fn default_m_star() -> Vec<usize> {
    (6..=20).collect()
}

fn default_n_star() -> usize {
    100
}

/// One simulation scenario with its replication count and estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    /// Individuals (training individuals for `semi_new`).
    pub n: usize,
    /// Measurements per individual.
    pub m: usize,
    pub gamma_truth: Vec<f64>,
    pub sigma: f64,
    #[serde(default = "default_independence")]
    pub error_correlation: CorrelationKind,
    #[serde(default)]
    pub rho: f64,
    pub n_replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Row label; defaults to the scenario name.
    #[serde(default)]
    pub label: Option<String>,
    /// Fit settings for the penalized methods; `lambda` is tuned per
    /// replication and ignored here.
    #[serde(default)]
    pub config: ModelConfig<f64>,
    /// Fixed `λ` grid; the default grid is built per replication when absent.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Measurement counts of the new individuals (`semi_new`).
    #[serde(default = "default_m_star")]
    pub m_star: Vec<usize>,
    /// Number of new individuals (`semi_new`).
    #[serde(default = "default_n_star")]
    pub n_star: usize,
}

fn default_independence() -> CorrelationKind {
    CorrelationKind::Independence
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario, n: usize, m: usize, gamma_truth: Vec<f64>) -> Self {
        Self {
            scenario,
            n,
            m,
            gamma_truth,
            sigma: 1.0,
            error_correlation: CorrelationKind::Independence,
            rho: 0.0,
            n_replications: 100,
            seed: 0,
            methods: default_methods(),
            label: None,
            config: ModelConfig::default(),
            lambda_grid: None,
            m_star: default_m_star(),
            n_star: default_n_star(),
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.scenario.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MdspError::InvalidConfig(msg));
        if self.n_replications == 0 {
            return bad("n_replications must be at least 1".into());
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.n == 0 || self.m < 2 {
            return bad(format!("need n >= 1 and m >= 2, got n = {}, m = {}", self.n, self.m));
        }
        if self.gamma_truth.len() != self.scenario.n_gamma() {
            return bad(format!(
                "scenario {} needs {} effect values, got {}",
                self.scenario,
                self.scenario.n_gamma(),
                self.gamma_truth.len()
            ));
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if self.error_correlation != CorrelationKind::Independence {
            CorrelationModel::new(self.error_correlation, self.rho, self.m)?;
        }
        if self.scenario == Scenario::SemiNew {
            if self.m_star.is_empty() || self.m_star.iter().any(|&m| m < 2) {
                return bad("m_star values must be at least 2".into());
            }
            if self.n_star == 0 {
                return bad("n_star must be at least 1".into());
            }
        }
        Ok(())
    }

    /// True coefficient matrix (`N × p`) of the training individuals.
    pub fn beta_truth(&self) -> Matrix<f64> {
        let (n, p) = (self.n, self.scenario.p());
        let g = &self.gamma_truth;
        let mut beta = Matrix::zeros(n, p);
        for i in 0..n {
            let first_half = i < n / 2;
            match self.scenario {
                Scenario::SingleCovariate => beta[(i, 0)] = if first_half { g[0] } else { 0.0 },
                Scenario::HomogeneousMisspec => beta[(i, 0)] = g[0],
                Scenario::ThreeGroupMisspec => {
                    beta[(i, 0)] = match 3 * i / n {
                        0 => g[0],
                        1 => 0.0,
                        _ => g[1],
                    }
                }
                Scenario::TwoCovariateCorrelated | Scenario::SemiNew => {
                    beta[(i, 0)] = if first_half { g[0] } else { 0.0 };
                    beta[(i, 1)] = if first_half { 0.0 } else { g[1] };
                }
            }
        }
        beta
    }
}

/// One simulated dataset and the coefficients that generated it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: LongitudinalDataset<f64>,
    pub beta: Matrix<f64>,
    pub alpha: Vec<f64>,
}

impl Generated {
    /// True subgroup labels: 0 for zero cells, else the rank of the value
    /// among the distinct non-zero values of its column.
    pub fn assignment(&self) -> SubgroupAssignment {
        truth_assignment(&self.beta)
    }
}

pub fn truth_assignment(beta: &Matrix<f64>) -> SubgroupAssignment {
    let labels = (0..beta.cols())
        .map(|k| {
            let col = beta.column(k);
            let mut vals: Vec<f64> = col.iter().copied().filter(|&v| v != 0.0).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            col.iter()
                .map(|&v| {
                    if v == 0.0 {
                        Some(0)
                    } else {
                        vals.iter().position(|&u| u == v).map(|l| l + 1)
                    }
                })
                .collect()
        })
        .collect();
    SubgroupAssignment { labels }
}

/// Random generator of replication `replication`; `lane` separates the
/// training data from other draws within the same replication.
pub(crate) fn replication_rng(seed: u64, replication: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((lane) << 32) | replication as u64);
    rng
}

/// Draws responses for individuals with coefficient rows `beta`.
pub(crate) fn simulate(
    rng: &mut ChaCha8Rng,
    beta: &Matrix<f64>,
    m: usize,
    sigma: f64,
    errors: &CorrelationModel<f64>,
    first_id: usize,
) -> Result<LongitudinalDataset<f64>> {
    let (n, p, q) = (beta.rows(), beta.cols(), ALPHA_TRUTH.len());
    let chol = Cholesky::factor(&errors.matrix())?;
    let mut ids = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n * m);
    let mut x = Vec::with_capacity(n * m * p);
    let mut z = Vec::with_capacity(n * m * q);
    for i in 0..n {
        ids.push(format!("{}", first_id + i + 1));
        let mut xi = vec![0.0; m * p];
        let mut zi = vec![0.0; m * q];
        for t in 0..m {
            for k in 0..p {
                xi[t * p + k] = rng.sample(StandardNormal);
            }
            zi[t * q] = 1.0;
            for j in 1..q {
                zi[t * q + j] = rng.sample(StandardNormal);
            }
        }
        let xi_noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let eps = chol.lower_mul(&xi_noise);
        for t in 0..m {
            let mut mu = 0.0;
            for k in 0..p {
                mu += xi[t * p + k] * beta[(i, k)];
            }
            for j in 0..q {
                mu += zi[t * q + j] * ALPHA_TRUTH[j];
            }
            y.push(mu + sigma * eps[t]);
        }
        x.extend(xi);
        z.extend(zi);
    }
    LongitudinalDataset::new(ids, m, p, q, y, x, z)
}

pub(crate) fn error_model(spec: &ExperimentSpec, m: usize) -> Result<CorrelationModel<f64>> {
    match spec.error_correlation {
        CorrelationKind::Independence => Ok(CorrelationModel::independence(m)),
        kind => CorrelationModel::new(kind, spec.rho, m),
    }
}

/// Training data of replication `replication`; deterministic in
/// `(spec.seed, replication)`.
pub fn generate(spec: &ExperimentSpec, replication: usize) -> Result<Generated> {
    spec.validate()?;
    let beta = spec.beta_truth();
    let mut rng = replication_rng(spec.seed, replication, 0);
    let dataset = simulate(&mut rng, &beta, spec.m, spec.sigma, &error_model(spec, spec.m)?, 0)?;
    Ok(Generated {
        dataset,
        beta,
        alpha: ALPHA_TRUTH.to_vec(),
    })
}

/// `√(Σ (β̂ − β)² / (N p))`.
pub fn rmse(beta_hat: &Matrix<f64>, beta_truth: &Matrix<f64>) -> Result<f64> {
    check_shapes(beta_hat, beta_truth)?;
    let n = beta_hat.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let ss: f64 = beta_hat
        .as_slice()
        .iter()
        .zip(beta_truth.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n as f64).sqrt())
}

/// Selection accuracy pooled over all cells. Conditional rates with an
/// empty denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub cvsr: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn selection_metrics(beta_hat: &Matrix<f64>, beta_truth: &Matrix<f64>) -> Result<SelectionMetrics> {
    check_shapes(beta_hat, beta_truth)?;
    let selected: Vec<bool> = beta_hat.as_slice().iter().map(|&v| v != 0.0).collect();
    Ok(selection_from_flags(&selected, beta_truth.as_slice()))
}

/// As [`selection_metrics`] with the selected cells given as flags.
pub fn selection_from_flags(selected: &[bool], truth: &[f64]) -> SelectionMetrics {
    let (mut correct, mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(truth) {
        let active = t != 0.0;
        if s == active {
            correct += 1;
        }
        if active {
            pos += 1;
            tp += usize::from(s);
        } else {
            neg += 1;
            tn += usize::from(!s);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    SelectionMetrics {
        cvsr: if truth.is_empty() { 1.0 } else { correct as f64 / truth.len() as f64 },
        sensitivity: ratio(tp, pos),
        specificity: ratio(tn, neg),
    }
}

fn check_shapes(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MdspError::ShapeMismatch(format!(
            "{}x{} estimate against {}x{} truth",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}
