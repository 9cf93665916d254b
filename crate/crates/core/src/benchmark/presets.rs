use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::CorrelationKind;
use crate::error::{MdspError, Result};

use super::{ExperimentSpec, Method, Scenario};

/// Preset simulation designs, one per results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresetTable {
    /// Single covariate, `γ ∈ {1, 2}`, `(N, m) ∈ {40, 100} × {10, 20}`.
    One,
    /// Two covariates with correlated errors, three working structures.
    Two,
    /// Misspecified number of subgroups.
    Three,
    /// New individuals with few measurements.
    SemiNew,
}

impl FromStr for PresetTable {
    type Err = MdspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "3" => Ok(Self::Three),
            "semi-new" | "semi_new" => Ok(Self::SemiNew),
            other => Err(MdspError::InvalidConfig(format!(
                "unknown table `{other}` (expected 1, 2, 3 or semi-new)"
            ))),
        }
    }
}

impl fmt::Display for PresetTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::SemiNew => "semi-new",
        })
    }
}

/// Experiment specs of one table with `reps` replications each.
pub fn preset_table(table: PresetTable, reps: usize, seed: u64) -> Vec<ExperimentSpec> {
    let base = |scenario, n, m, gamma: Vec<f64>, label: String| {
        let mut s = ExperimentSpec::new(scenario, n, m, gamma);
        s.n_replications = reps;
        s.seed = seed;
        s.label = Some(label);
        s
    };
    match table {
        PresetTable::One => {
            let mut out = Vec::new();
            for gamma in [1.0, 2.0] {
                for (n, m) in [(40, 10), (40, 20), (100, 10), (100, 20)] {
                    let mut s = base(
                        Scenario::SingleCovariate,
                        n,
                        m,
                        vec![gamma],
                        format!("gamma={gamma} N={n} m={m}"),
                    );
                    s.methods = vec![Method::Mdsp, Method::Sub, Method::Homo];
                    out.push(s);
                }
            }
            out
        }
        PresetTable::Two => [(CorrelationKind::Exchangeable, "exch"), (CorrelationKind::Ar1, "ar1")]
            .into_iter()
            .map(|(kind, name)| {
                let mut s = base(
                    Scenario::TwoCovariateCorrelated,
                    80,
                    10,
                    vec![1.0, -2.0],
                    format!("truth={name} N=80 m=10"),
                );
                s.error_correlation = kind;
                s.rho = 0.5;
                s.methods = vec![Method::MdspAr1, Method::MdspExch, Method::MdspInd];
                s
            })
            .collect(),
        PresetTable::Three => {
            let mut homo = base(Scenario::HomogeneousMisspec, 60, 10, vec![2.0], "homogeneous N=60 m=10".into());
            homo.methods = vec![Method::Mdsp, Method::Sub];
            let mut three = base(
                Scenario::ThreeGroupMisspec,
                60,
                10,
                vec![-3.0, 1.0],
                "three-group N=60 m=10".into(),
            );
            three.methods = vec![Method::Mdsp, Method::Sub];
            vec![homo, three]
        }
        PresetTable::SemiNew => {
            let mut s = base(Scenario::SemiNew, 100, 20, vec![1.0, -2.0], "semi-new N=100 m=20".into());
            s.methods = vec![Method::Mdsp, Method::Ols, Method::Lasso, Method::Homo];
            vec![s]
        }
    }
}
