use std::path::Path;

use anyhow::{bail, Context};
use mdsp::benchmark::{preset_table, run_experiment, ExperimentSpec, MetricsTable, PresetTable, Scenario};
use mdsp::solver::semi_new::{fit_semi_new, tune_semi_new_batch};
use mdsp::tuning::{select_groups as bic_select, select_lambda};
use mdsp::{fit_mdsp, load_dataset, ColumnSchema, Dataset, Fit, Report};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{BenchArgs, FitArgs, GroupArgs, ModelArgs, PredictArgs, TuneArgs};
use crate::output::{write_coefficients, write_json, write_text, Outcome, RunLog};

fn load(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path, &ColumnSchema::default()).with_context(|| format!("loading {}", path.display()))
}

fn load_with_config(model: &ModelArgs) -> anyhow::Result<(Dataset, mdsp::Config, bool)> {
    let ds = load(&model.data)?;
    let (cfg, lambda_given) = model.resolve(&ds)?;
    Ok((ds, cfg, lambda_given))
}

#[derive(Serialize, Deserialize)]
struct FitArtifact {
    fit: Fit,
    #[serde(default)]
    tuning: Option<Report>,
}

pub fn fit(args: &FitArgs, out: &Path) -> anyhow::Result<Outcome> {
    let (ds, cfg, lambda_given) = load_with_config(&args.model)?;
    let mut log = RunLog::create(&out.join("run.ndjson"))?;
    log.event(
        "start",
        json!({ "command": "fit", "individuals": ds.n_individuals(), "measurements": ds.measurements(),
                "p": ds.p(), "q": ds.q() }),
    )?;
    let (fit, tuning) = if lambda_given {
        (fit_mdsp(&ds, &cfg, None)?, None)
    } else {
        let (report, fit) = select_lambda(&ds, &cfg, None)?;
        log.event(
            "lambda_selected",
            json!({ "lambda": report.chosen_lambda, "grid_size": report.lambda_grid.len() }),
        )?;
        (fit, Some(report))
    };
    log.iterations(&fit, json!({}))?;
    log.event(
        "finish",
        json!({ "converged": fit.converged, "iterations": fit.iterations, "objective": fit.objective,
                "lambda": fit.lambda, "df": fit.df }),
    )?;
    log.finish()?;
    write_coefficients(&out.join("coefficients.csv"), ds.ids(), &[&fit])?;
    let converged = fit.converged;
    write_json(&out.join("fit.json"), "fit", &FitArtifact { fit, tuning })?;
    Ok(Outcome::from_converged(converged))
}

pub fn tune(args: &TuneArgs, out: &Path) -> anyhow::Result<Outcome> {
    let (ds, cfg, _) = load_with_config(&args.model)?;
    let (report, fit) = select_lambda(&ds, &cfg, args.grid.as_deref())?;
    let mut log = RunLog::create(&out.join("run.ndjson"))?;
    for (j, l) in report.lambda_grid.iter().enumerate() {
        log.event("grid_point", json!({ "lambda": l, "df": report.df_per_lambda[j], "gcv": report.gcv_values[j] }))?;
    }
    log.event("lambda_selected", json!({ "lambda": report.chosen_lambda }))?;
    log.finish()?;
    write_text(&out.join("gcv.csv"), &report.to_csv())?;
    let converged = fit.converged;
    write_json(&out.join("tuning.json"), "tune", &FitArtifact { fit, tuning: Some(report) })?;
    Ok(Outcome::from_converged(converged))
}

pub fn select_groups(args: &GroupArgs, out: &Path) -> anyhow::Result<Outcome> {
    let (ds, cfg, _) = load_with_config(&args.model)?;
    let report = bic_select(&ds, &cfg, Some(&args.candidates))?;
    let mut w = csv::Writer::from_path(out.join("bic.csv"))?;
    w.write_record(["covariate", "groups", "bic"])?;
    for (k, table) in report.bic_table.iter().enumerate() {
        for (b, v) in table {
            w.write_record([format!("x{}", k + 1), b.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    write_json(
        &out.join("groups.json"),
        "select-groups",
        &json!({ "bic_table": report.bic_table, "chosen_groups": report.chosen_b }),
    )?;
    println!(
        "{}",
        report
            .chosen_b
            .iter()
            .enumerate()
            .map(|(k, b)| format!("x{}={b}", k + 1))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct NewIndividual<'a> {
    id: &'a str,
    beta: Vec<f64>,
    alpha: &'a [f64],
    /// Covariates with a non-zero coefficient.
    selected: Vec<String>,
    group_labels: &'a [Option<usize>],
    converged: bool,
}

pub fn predict_new(args: &PredictArgs, out: &Path) -> anyhow::Result<Outcome> {
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model: FitArtifact = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.model.display()))?;
    let gamma = model.fit.gamma;
    let ds = load(&args.data)?;
    if gamma.len() != ds.p() {
        return Err(mdsp::MdspError::ShapeMismatch(format!(
            "model has group effects for {} covariates, new data has {}",
            gamma.len(),
            ds.p()
        ))
        .into());
    }
    let individuals: Vec<Dataset> = (0..ds.n_individuals()).map(|i| ds.select(&[i])).collect();
    let (lambda_star, fits) = match args.lambda_star {
        Some(l) => {
            let fits = individuals
                .par_iter()
                .map(|ind| fit_semi_new(ind, &gamma, l))
                .collect::<mdsp::Result<Vec<_>>>()?;
            (l, fits)
        }
        None => tune_semi_new_batch(&individuals, &gamma, args.grid.as_deref())?,
    };
    let refs: Vec<&Fit> = fits.iter().collect();
    write_coefficients(&out.join("coefficients.csv"), ds.ids(), &refs)?;
    // Per-individual fits carry one label row per covariate.
    let labels: Vec<Vec<Option<usize>>> =
        fits.iter().map(|f| f.assignment.labels.iter().map(|col| col[0]).collect()).collect();
    let records: Vec<NewIndividual> = fits
        .iter()
        .zip(ds.ids())
        .zip(&labels)
        .map(|((f, id), labels)| {
            let beta = f.beta.row(0).to_vec();
            NewIndividual {
                id,
                selected: beta
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| **b != 0.0)
                    .map(|(k, _)| format!("x{}", k + 1))
                    .collect(),
                beta,
                alpha: &f.alpha,
                group_labels: labels,
                converged: f.converged,
            }
        })
        .collect();
    let mut log = RunLog::create(&out.join("run.ndjson"))?;
    log.event("lambda_star", json!({ "lambda_star": lambda_star, "tuned": args.lambda_star.is_none() }))?;
    for (f, id) in fits.iter().zip(ds.ids()) {
        log.iterations(f, json!({ "id": id }))?;
    }
    log.finish()?;
    write_json(
        &out.join("predictions.json"),
        "predict-new",
        &json!({ "lambda_star": lambda_star, "gamma_hat": gamma, "individuals": records }),
    )?;
    Ok(Outcome::from_converged(fits.iter().all(|f| f.converged)))
}

fn bench_specs(args: &BenchArgs) -> anyhow::Result<Vec<ExperimentSpec>> {
    let mut specs = if let Some(t) = &args.paper_table {
        let table: PresetTable = t.parse()?;
        preset_table(table, args.reps.unwrap_or(100), args.seed.unwrap_or(0))
    } else if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let specs = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|s| vec![s])
        };
        specs.with_context(|| format!("invalid experiment spec in {}", path.display()))?
    } else if let Some(name) = &args.scenario {
        let scenario: Scenario = name.parse()?;
        let gamma = args.gamma.clone().unwrap_or_else(|| vec![1.0; scenario.n_gamma()]);
        vec![ExperimentSpec::new(scenario, args.n, args.m, gamma)]
    } else {
        bail!("one of --paper-table, --spec or --scenario is required");
    };
    for s in &mut specs {
        if let Some(r) = args.reps {
            s.n_replications = r;
        }
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
        s.validate()?;
    }
    Ok(specs)
}

pub fn bench(args: &BenchArgs, out: &Path) -> anyhow::Result<Outcome> {
    let specs = bench_specs(args)?;
    let mut log = RunLog::create(&out.join("run.ndjson"))?;
    let mut table: Option<MetricsTable> = None;
    for spec in &specs {
        log.event(
            "experiment",
            json!({ "label": spec.label(), "scenario": spec.scenario, "replications": spec.n_replications }),
        )?;
        let t = run_experiment(spec)?;
        match &mut table {
            Some(all) => all.extend(t),
            None => table = Some(t),
        }
    }
    log.finish()?;
    let table = table.expect("at least one spec");
    write_text(&out.join("metrics.csv"), &table.to_csv())?;
    write_text(&out.join("replications.csv"), &table.raw_csv())?;
    let text = table.to_text();
    write_text(&out.join("metrics.txt"), &text)?;
    write_json(&out.join("bench.json"), "bench", &json!({ "specs": specs, "rows": table.rows }))?;
    print!("{text}");
    Ok(Outcome::Done)
}
