use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mdsp::{Config, CorrelationKind, Dataset};

#[derive(Parser, Debug)]
#[command(name = "mdsp", version, about = "Individualized multi-directional variable selection")]
pub struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory
    #[arg(long, global = true, default_value = "mdsp-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model; λ is tuned by GCV when not given
    Fit(FitArgs),
    /// GCV over a λ grid
    Tune(TuneArgs),
    /// Modified BIC over subgroup counts per covariate
    SelectGroups(GroupArgs),
    /// Fit new individuals against trained group effects
    PredictNew(PredictArgs),
    /// Monte-Carlo benchmark
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Long-format CSV with id, time, y, x1.., z1.. columns
    pub data: PathBuf,

    /// JSON model configuration; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub lambda: Option<f64>,

    #[arg(long)]
    pub kappa: Option<f64>,

    /// Working correlation: ind, exch or ar1
    #[arg(long)]
    pub corr: Option<CorrelationKind>,

    /// Fixed correlation parameter (estimated when omitted)
    #[arg(long)]
    pub rho: Option<f64>,

    /// Subgroups for covariate k (1-based), zero group included, e.g. `1=3`
    #[arg(long = "groups", value_parser = parse_groups)]
    pub groups: Vec<(usize, usize)>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Explicit λ grid (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct GroupArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Candidate subgroup counts (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub candidates: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// fit.json written by `mdsp fit`
    #[arg(long)]
    pub model: PathBuf,

    /// New individuals, same column layout as the training data
    pub data: PathBuf,

    /// Fixed λ*; tuned by pooled GCV when omitted
    #[arg(long)]
    pub lambda_star: Option<f64>,

    /// Explicit λ* grid (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Preset design: 1, 2, 3 or semi-new
    #[arg(long, conflicts_with_all = ["spec", "scenario"])]
    pub paper_table: Option<String>,

    /// ExperimentSpec JSON (one object or an array)
    #[arg(long, conflicts_with = "scenario")]
    pub spec: Option<PathBuf>,

    /// Scenario name for an ad-hoc experiment
    #[arg(long)]
    pub scenario: Option<String>,

    #[arg(long, default_value_t = 100)]
    pub n: usize,

    #[arg(long, default_value_t = 10)]
    pub m: usize,

    /// True group effects (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gamma: Option<Vec<f64>>,

    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_groups(s: &str) -> Result<(usize, usize), String> {
    let (k, b) = s.split_once('=').ok_or_else(|| format!("expected k=B, got `{s}`"))?;
    let k: usize = k.trim().parse().map_err(|_| format!("bad covariate index `{k}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad group count `{b}`"))?;
    if k == 0 {
        return Err("covariate indices start at 1".into());
    }
    Ok((k, b))
}

impl ModelArgs {
    /// Config file (if any) with flags applied on top, and whether `λ` was
    /// given by either.
    pub fn resolve(&self, data: &Dataset) -> anyhow::Result<(Config, bool)> {
        let (mut cfg, mut lambda_given): (Config, bool) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let value: serde_json::Value =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let given = value.get("lambda").is_some();
                (serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?, given)
            }
            None => (Config::default(), false),
        };
        if let Some(l) = self.lambda {
            cfg.lambda = l;
            lambda_given = true;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(c) = self.corr {
            cfg.correlation = c;
        }
        if self.rho.is_some() {
            cfg.rho = self.rho;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        let p = data.p();
        if !self.groups.is_empty() {
            if cfg.groups_per_covariate.is_empty() {
                cfg.groups_per_covariate = vec![2; p];
            }
            for &(k, b) in &self.groups {
                if k > p {
                    bail!("--groups {k}={b}: data has {p} heterogeneous covariates");
                }
                cfg.groups_per_covariate[k - 1] = b;
            }
        }
        cfg.validate(p)?;
        Ok((cfg, lambda_given))
    }
}
