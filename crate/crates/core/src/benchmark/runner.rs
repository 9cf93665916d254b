use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CorrelationKind, LongitudinalDataset, ModelConfig};
use crate::error::{MdspError, Result};
use crate::linalg::Matrix;
use crate::solver::baselines::{fit_homogeneous, fit_individualwise, fit_lasso_baseline, fit_oracle};
use crate::solver::semi_new::{fit_ols_individual, tune_semi_new_batch};
use crate::solver::{resolve_correlation, FitResult};
use crate::tuning::select_lambda;

use super::{
    generate, replication_rng, rmse, selection_from_flags, selection_metrics, simulate,
    ExperimentSpec, Method, Scenario,
};
use crate::correlation::CorrelationModel;

/// Share of failed replications above which a row is flagged invalid.
const MAX_FAILURE_SHARE: f64 = 0.05;
const OLS_LEVEL: f64 = 0.05;

/// Metrics of one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub rmse: f64,
    pub cvsr: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Correct selection/elimination rate of each covariate.
    pub cvsr_per_covariate: Vec<f64>,
    /// First group effect of the first covariate (penalized fits).
    pub gamma_hat: Option<f64>,
    pub fits_converged: usize,
    pub fits_total: usize,
    pub descent_violations: usize,
}

/// One line of the raw per-replication dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub label: String,
    pub method: Method,
    pub replication: usize,
    pub m_star: Option<usize>,
    pub outcome: std::result::Result<MethodOutcome, String>,
}

/// Aggregate over replications of one (label, method, m*) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub method: Method,
    pub m_star: Option<usize>,
    pub replications: usize,
    pub failures: usize,
    pub rmse_mean: f64,
    pub rmse_sd: Option<f64>,
    pub cvsr_mean: f64,
    pub cvsr_sd: Option<f64>,
    pub sensitivity_mean: Option<f64>,
    pub sensitivity_sd: Option<f64>,
    pub specificity_mean: Option<f64>,
    pub specificity_sd: Option<f64>,
    pub cvsr_per_covariate: Vec<f64>,
    pub gamma_mean: Option<f64>,
    pub gamma_sd: Option<f64>,
    /// Converged share of all ADMM fits behind this row.
    pub converged_rate: Option<f64>,
    pub descent_violations: usize,
    /// More than 5% of replications failed.
    pub invalid: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<ReplicationRecord>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1).then(|| {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (Some(mean), sd)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl MetricsTable {
    pub fn from_records(records: Vec<ReplicationRecord>) -> Self {
        let mut cells: BTreeMap<(String, Option<usize>, usize), Vec<&ReplicationRecord>> = BTreeMap::new();
        let mut order: Vec<(String, Option<usize>, usize)> = Vec::new();
        for r in &records {
            let pos = Method::ALL.iter().position(|&m| m == r.method).unwrap_or(0);
            let key = (r.label.clone(), r.m_star, pos);
            if !cells.contains_key(&key) {
                order.push(key.clone());
            }
            cells.entry(key).or_default().push(r);
        }
        let rows = order
            .into_iter()
            .map(|key| {
                let recs = &cells[&key];
                let ok: Vec<&MethodOutcome> = recs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let pick = |f: &dyn Fn(&MethodOutcome) -> Option<f64>| -> Vec<f64> {
                    ok.iter().filter_map(|o| f(o)).collect()
                };
                let (rmse_mean, rmse_sd) = mean_sd(&pick(&|o| Some(o.rmse)));
                let (cvsr_mean, cvsr_sd) = mean_sd(&pick(&|o| Some(o.cvsr)));
                let (sensitivity_mean, sensitivity_sd) = mean_sd(&pick(&|o| o.sensitivity));
                let (specificity_mean, specificity_sd) = mean_sd(&pick(&|o| o.specificity));
                let (gamma_mean, gamma_sd) = mean_sd(&pick(&|o| o.gamma_hat));
                let p = ok.first().map_or(0, |o| o.cvsr_per_covariate.len());
                let cvsr_per_covariate = (0..p)
                    .map(|k| mean_sd(&pick(&|o| o.cvsr_per_covariate.get(k).copied())).0.unwrap_or(f64::NAN))
                    .collect();
                let fits_total: usize = ok.iter().map(|o| o.fits_total).sum();
                let fits_converged: usize = ok.iter().map(|o| o.fits_converged).sum();
                let failures = recs.len() - ok.len();
                MetricsRow {
                    label: key.0.clone(),
                    method: recs[0].method,
                    m_star: key.1,
                    replications: recs.len(),
                    failures,
                    rmse_mean: rmse_mean.unwrap_or(f64::NAN),
                    rmse_sd,
                    cvsr_mean: cvsr_mean.unwrap_or(f64::NAN),
                    cvsr_sd,
                    sensitivity_mean,
                    sensitivity_sd,
                    specificity_mean,
                    specificity_sd,
                    cvsr_per_covariate,
                    gamma_mean,
                    gamma_sd,
                    converged_rate: (fits_total > 0).then(|| fits_converged as f64 / fits_total as f64),
                    descent_violations: ok.iter().map(|o| o.descent_violations).sum(),
                    invalid: failures as f64 > MAX_FAILURE_SHARE * recs.len() as f64,
                }
            })
            .collect();
        Self { rows, records }
    }

    pub fn row(&self, label: &str, method: Method, m_star: Option<usize>) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.label == label && r.method == method && r.m_star == m_star)
    }

    /// Outcomes of one cell in replication order; failures are `None`.
    pub fn outcomes(&self, label: &str, method: Method, m_star: Option<usize>) -> Vec<Option<&MethodOutcome>> {
        let mut recs: Vec<&ReplicationRecord> = self
            .records
            .iter()
            .filter(|r| r.label == label && r.method == method && r.m_star == m_star)
            .collect();
        recs.sort_by_key(|r| r.replication);
        recs.into_iter().map(|r| r.outcome.as_ref().ok()).collect()
    }

    pub fn extend(&mut self, other: MetricsTable) {
        let mut records = std::mem::take(&mut self.records);
        records.extend(other.records);
        *self = Self::from_records(records);
    }

    fn max_covariates(&self) -> usize {
        self.rows.iter().map(|r| r.cvsr_per_covariate.len()).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let p = self.max_covariates();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "label", "method", "m_star", "replications", "failures", "rmse_mean", "rmse_sd", "cvsr_mean",
            "cvsr_sd", "sensitivity_mean", "sensitivity_sd", "specificity_mean", "specificity_sd",
            "gamma_mean", "gamma_sd", "converged_rate", "descent_violations", "invalid",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=p).map(|k| format!("cvsr_x{k}")));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.label.clone(),
                r.method.to_string(),
                r.m_star.map(|m| m.to_string()).unwrap_or_default(),
                r.replications.to_string(),
                r.failures.to_string(),
                r.rmse_mean.to_string(),
                opt_str(r.rmse_sd),
                r.cvsr_mean.to_string(),
                opt_str(r.cvsr_sd),
                opt_str(r.sensitivity_mean),
                opt_str(r.sensitivity_sd),
                opt_str(r.specificity_mean),
                opt_str(r.specificity_sd),
                opt_str(r.gamma_mean),
                opt_str(r.gamma_sd),
                opt_str(r.converged_rate),
                r.descent_violations.to_string(),
                r.invalid.to_string(),
            ];
            rec.extend((0..p).map(|k| opt_str(r.cvsr_per_covariate.get(k).copied())));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Aligned text table; sd columns are dropped when every row has a
    /// single replication.
    pub fn to_text(&self) -> String {
        let with_sd = self.rows.iter().any(|r| r.replications > 1);
        let with_m_star = self.rows.iter().any(|r| r.m_star.is_some());
        let mut header = vec!["label", "method"];
        if with_m_star {
            header.push("m*");
        }
        header.extend(["reps", "fail", "rmse"]);
        if with_sd {
            header.push("rmse_sd");
        }
        header.extend(["cvsr", "sens", "spec", "gamma"]);
        if with_sd {
            header.push("gamma_sd");
        }
        header.push("conv");
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut line = vec![r.label.clone(), r.method.to_string()];
            if with_m_star {
                line.push(r.m_star.map(|m| m.to_string()).unwrap_or_default());
            }
            line.extend([
                r.replications.to_string(),
                r.failures.to_string(),
                format!("{:.4}", r.rmse_mean),
            ]);
            if with_sd {
                line.push(fmt_opt(r.rmse_sd));
            }
            line.extend([
                format!("{:.4}", r.cvsr_mean),
                fmt_opt(r.sensitivity_mean),
                fmt_opt(r.specificity_mean),
                fmt_opt(r.gamma_mean),
            ]);
            if with_sd {
                line.push(fmt_opt(r.gamma_sd));
            }
            line.push(fmt_opt(r.converged_rate));
            if r.invalid {
                line.push("INVALID".into());
            }
            table.push(line);
        }
        let cols = table.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().filter_map(|l| l.get(c)).map(String::len).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in table {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| if c < 2 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// One line per replication and method.
    pub fn raw_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label", "method", "replication", "m_star", "rmse", "cvsr", "sensitivity", "specificity", "gamma_hat",
            "error",
        ])
        .expect("in-memory write");
        for r in &self.records {
            let m_star = r.m_star.map(|m| m.to_string()).unwrap_or_default();
            let rec = match &r.outcome {
                Ok(o) => vec![
                    r.label.clone(),
                    r.method.to_string(),
                    r.replication.to_string(),
                    m_star,
                    o.rmse.to_string(),
                    o.cvsr.to_string(),
                    opt_str(o.sensitivity),
                    opt_str(o.specificity),
                    opt_str(o.gamma_hat),
                    String::new(),
                ],
                Err(e) => vec![
                    r.label.clone(),
                    r.method.to_string(),
                    r.replication.to_string(),
                    m_star,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            };
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn per_covariate_cvsr(selected: &[bool], truth: &Matrix<f64>) -> Vec<f64> {
    let p = truth.cols();
    (0..p)
        .map(|k| {
            let flags: Vec<bool> = (0..truth.rows()).map(|i| selected[i * p + k]).collect();
            selection_from_flags(&flags, &truth.column(k)).cvsr
        })
        .collect()
}

fn outcome_from_beta(beta: &Matrix<f64>, truth: &Matrix<f64>) -> Result<MethodOutcome> {
    let sel = selection_metrics(beta, truth)?;
    let flags: Vec<bool> = beta.as_slice().iter().map(|&v| v != 0.0).collect();
    Ok(MethodOutcome {
        rmse: rmse(beta, truth)?,
        cvsr: sel.cvsr,
        sensitivity: sel.sensitivity,
        specificity: sel.specificity,
        cvsr_per_covariate: per_covariate_cvsr(&flags, truth),
        gamma_hat: None,
        fits_converged: 0,
        fits_total: 0,
        descent_violations: 0,
    })
}

fn mdsp_config(spec: &ExperimentSpec, kind: CorrelationKind) -> ModelConfig<f64> {
    ModelConfig {
        correlation: kind,
        rho: if kind == CorrelationKind::Independence { None } else { spec.config.rho },
        ..spec.config.clone()
    }
}

fn fit_tuned(spec: &ExperimentSpec, ds: &LongitudinalDataset<f64>, kind: CorrelationKind) -> Result<(FitResult<f64>, usize, usize, usize)> {
    let (report, fit) = select_lambda(ds, &mdsp_config(spec, kind), spec.lambda_grid.as_deref())?;
    Ok((fit, report.fits_converged, report.fits_total, report.descent_violations))
}

fn run_method(spec: &ExperimentSpec, method: Method, ds: &LongitudinalDataset<f64>, truth: &Matrix<f64>) -> Result<MethodOutcome> {
    let corr = || resolve_correlation(ds, spec.config.correlation, spec.config.rho);
    if let Some(kind) = method.working_correlation(spec.config.correlation) {
        let (fit, conv, total, viol) = fit_tuned(spec, ds, kind)?;
        let mut out = outcome_from_beta(&fit.beta, truth)?;
        out.gamma_hat = fit.gamma.first().and_then(|g| g.first()).copied();
        out.fits_converged = conv;
        out.fits_total = total;
        out.descent_violations = viol;
        return Ok(out);
    }
    let fit = match method {
        Method::Sub => fit_individualwise(ds, &corr()?)?,
        Method::Homo => fit_homogeneous(ds, &corr()?)?,
        Method::Oracle => fit_oracle(ds, &super::truth_assignment(truth), &corr()?)?,
        Method::Lasso => fit_lasso_baseline(ds, spec.lambda_grid.as_deref())?,
        Method::Ols => {
            return Err(MdspError::InvalidConfig(
                "ols applies to new individuals only; use sub for training data".into(),
            ))
        }
        _ => unreachable!("penalized methods handled above"),
    };
    let mut out = outcome_from_beta(&fit.beta, truth)?;
    if method == Method::Homo {
        out.gamma_hat = fit.beta.as_slice().first().copied();
    }
    Ok(out)
}

/// All requested methods on replication `replication` of `spec`.
pub fn run_replication(spec: &ExperimentSpec, replication: usize) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    if spec.scenario == Scenario::SemiNew {
        return semi_new_replication(spec, replication);
    }
    let generated = generate(spec, replication)?;
    let label = spec.label();
    Ok(spec
        .methods
        .iter()
        .map(|&method| ReplicationRecord {
            label: label.clone(),
            method,
            replication,
            m_star: None,
            outcome: run_method(spec, method, &generated.dataset, &generated.beta).map_err(|e| e.to_string()),
        })
        .collect())
}

/// Monte-Carlo experiment; replications run in parallel.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsTable> {
    spec.validate()?;
    let per_rep: Vec<Result<Vec<ReplicationRecord>>> = (0..spec.n_replications)
        .into_par_iter()
        .map(|r| run_replication(spec, r))
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    Ok(MetricsTable::from_records(records))
}

/// Semi-new-individual sweep: train on the two-covariate design, then fit
/// `n_star` new individuals at every `m*`.
pub fn run_semi_new(spec: &ExperimentSpec) -> Result<MetricsTable> {
    let spec = ExperimentSpec {
        scenario: Scenario::SemiNew,
        ..spec.clone()
    };
    run_experiment(&spec)
}

fn first_rows(ds: &LongitudinalDataset<f64>, i: usize, m: usize) -> Result<LongitudinalDataset<f64>> {
    let (p, q) = (ds.p(), ds.q());
    LongitudinalDataset::new(
        vec![ds.ids()[i].clone()],
        m,
        p,
        q,
        ds.y_i(i)[..m].to_vec(),
        ds.x_i(i)[..m * p].to_vec(),
        ds.z_i(i)[..m * q].to_vec(),
    )
}

fn semi_new_replication(spec: &ExperimentSpec, replication: usize) -> Result<Vec<ReplicationRecord>> {
    let label = spec.label();
    let methods: Vec<Method> = spec
        .methods
        .iter()
        .copied()
        .filter(|m| matches!(m, Method::Mdsp | Method::Ols | Method::Lasso | Method::Homo))
        .collect();
    if methods.is_empty() {
        return Err(MdspError::InvalidConfig(
            "semi-new sweep supports the methods mdsp, ols, lasso and homo".into(),
        ));
    }
    let train = generate(spec, replication)?;
    let (fit, ..) = fit_tuned(spec, &train.dataset, spec.config.correlation)?;
    let gamma_hat = fit.gamma.clone();
    let homo = fit_homogeneous(&train.dataset, &resolve_correlation(&train.dataset, spec.config.correlation, spec.config.rho)?)?;
    let beta_h = homo.beta.row(0).to_vec();

    let p = spec.scenario.p();
    let mut rng = replication_rng(spec.seed, replication, 1);
    let mut beta_new = Matrix::zeros(spec.n_star, p);
    for i in 0..spec.n_star {
        for k in 0..p {
            if rng.random_bool(0.5) {
                beta_new[(i, k)] = spec.gamma_truth[k];
            }
        }
    }
    let m_max = *spec.m_star.iter().max().expect("validated");
    let fresh = simulate(
        &mut rng,
        &beta_new,
        m_max,
        spec.sigma,
        &CorrelationModel::independence(m_max),
        spec.n,
    )?;

    let mut records = Vec::new();
    for &m_star in &spec.m_star {
        for &method in &methods {
            let individuals: Vec<LongitudinalDataset<f64>> = (0..spec.n_star)
                .map(|i| first_rows(&fresh, i, m_star))
                .collect::<Result<_>>()?;
            let fits: Vec<Result<(Vec<f64>, Vec<bool>)>> = match method {
                Method::Mdsp => match tune_semi_new_batch(&individuals, &gamma_hat, None) {
                    Ok((_, fits)) => fits
                        .into_iter()
                        .map(|f| {
                            let b = f.beta.row(0).to_vec();
                            let sel = b.iter().map(|&v| v != 0.0).collect();
                            Ok((b, sel))
                        })
                        .collect(),
                    Err(e) => vec![Err(e)],
                },
                _ => individuals
                    .par_iter()
                    .map(|ind| match method {
                        Method::Ols => {
                            let f = fit_ols_individual(ind, OLS_LEVEL)?;
                            Ok((f.beta, f.selected))
                        }
                        Method::Lasso => {
                            let f = fit_lasso_baseline(ind, None)?;
                            let b = f.beta.row(0).to_vec();
                            let sel = b.iter().map(|&v| v != 0.0).collect();
                            Ok((b, sel))
                        }
                        _ => Ok((beta_h.clone(), beta_h.iter().map(|&v| v != 0.0).collect())),
                    })
                    .collect(),
            };
            let mut est = Vec::new();
            let mut truth = Vec::new();
            let mut flags = Vec::new();
            let mut err = None;
            for (i, f) in fits.into_iter().enumerate() {
                match f {
                    Ok((b, s)) => {
                        est.extend(b);
                        flags.extend(s);
                        truth.extend_from_slice(beta_new.row(i));
                    }
                    Err(e) => err = Some(e.to_string()),
                }
            }
            let outcome = if est.is_empty() {
                Err(err.unwrap_or_else(|| "no new individuals".into()))
            } else {
                let rows = est.len() / p;
                let est = Matrix::from_vec(rows, p, est);
                let truth = Matrix::from_vec(rows, p, truth);
                let sel = selection_from_flags(&flags, truth.as_slice());
                let mut out = MethodOutcome {
                    rmse: rmse(&est, &truth)?,
                    cvsr: sel.cvsr,
                    sensitivity: sel.sensitivity,
                    specificity: sel.specificity,
                    cvsr_per_covariate: per_covariate_cvsr(&flags, &truth),
                    gamma_hat: None,
                    fits_converged: 0,
                    fits_total: 0,
                    descent_violations: 0,
                };
                if method == Method::Mdsp {
                    out.gamma_hat = gamma_hat.first().and_then(|g| g.first()).copied();
                }
                Ok(out)
            };
            records.push(ReplicationRecord {
                label: label.clone(),
                method,
                replication,
                m_star: Some(m_star),
                outcome,
            });
        }
    }
    Ok(records)
}
