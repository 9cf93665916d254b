use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use mdsp::{Fit, MdspError};
use serde::Serialize;
use serde_json::{json, Value};

/// Version of every JSON artifact written by the tool.
pub const SCHEMA_VERSION: u32 = 1;

pub enum Outcome {
    Done,
    /// Outputs were written but at least one fit missed the stopping rule.
    NotConverged,
}

impl Outcome {
    pub fn from_converged(ok: bool) -> Self {
        if ok {
            Outcome::Done
        } else {
            Outcome::NotConverged
        }
    }
}

/// One-line JSON error record for stderr.
pub fn error_record(e: &anyhow::Error) -> Value {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<MdspError>())
        .map(MdspError::kind)
        .unwrap_or("Error");
    json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": kind, "message": format!("{e:#}") },
    })
}

/// Writes `{"schema_version": .., "command": .., <body fields>}`.
pub fn write_json<S: Serialize>(path: &Path, command: &str, body: &S) -> anyhow::Result<()> {
    let mut value = json!({ "schema_version": SCHEMA_VERSION, "command": command });
    let body = serde_json::to_value(body)?;
    let Value::Object(fields) = body else {
        anyhow::bail!("artifact body must be a JSON object");
    };
    value.as_object_mut().expect("object").extend(fields);
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &value)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `id, covariate, beta, group_label` rows; free cells have an empty label.
pub fn write_coefficients(path: &Path, ids: &[String], fits: &[&Fit]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["id", "covariate", "beta", "group_label"])?;
    let mut row = 0;
    for fit in fits {
        for i in 0..fit.beta.rows() {
            for k in 0..fit.beta.cols() {
                let label = fit.assignment.labels[k][i].map(|l| l.to_string()).unwrap_or_default();
                w.write_record([
                    ids[row].clone(),
                    format!("x{}", k + 1),
                    fit.beta[(i, k)].to_string(),
                    label,
                ])?;
            }
            row += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Line-delimited JSON event log.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn event(&mut self, event: &str, fields: Value) -> anyhow::Result<()> {
        let mut line = json!({ "event": event, "timestamp": timestamp() });
        if let Value::Object(f) = fields {
            line.as_object_mut().expect("object").extend(f);
        }
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    /// One `iteration` event per ADMM iteration of `fit`.
    pub fn iterations(&mut self, fit: &Fit, extra: Value) -> anyhow::Result<()> {
        for (t, (obj, res)) in fit.objective_trace.iter().zip(&fit.primal_residual_trace).enumerate() {
            let mut fields = json!({
                "iteration": t + 1,
                "objective": obj,
                "primal_residual": res,
            });
            if let Value::Object(e) = &extra {
                fields.as_object_mut().expect("object").extend(e.clone());
            }
            self.event("iteration", fields)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn timestamp() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}
