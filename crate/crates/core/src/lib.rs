//! Individualized multi-directional variable selection for longitudinal
//! regression.
//!
//! Each individual `i` has its own coefficients `β_i` on the heterogeneous
//! covariates and shares `α` on the rest:
//! `y_i = X_i β_i + Z_i α + ε_i`. A separation penalty pulls every `β_ik`
//! toward the nearest of `{0, γ_k^{(1)}, …}`, so individuals fall into
//! covariate-specific subgroups with common effects while zero effects are
//! selected out.
//!
//! The numerical core is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod benchmark;
pub mod correlation;
pub mod data;
pub mod error;
pub mod linalg;
pub mod penalty;
pub mod scalar;
pub mod solver;
pub mod tuning;

pub use correlation::CorrelationModel;
pub use data::{
    load_dataset, read_dataset, save_dataset, write_dataset, CoefficientState, ColumnSchema,
    CorrelationKind, GammaUpdate, KappaScale, LongitudinalDataset, ModelConfig, SignConstraint,
    SubgroupAssignment, Violation,
};
pub use error::{MdspError, Result};
pub use linalg::Matrix;
pub use scalar::Scalar;
pub use solver::{fit_mdsp, FitResult, Problem};
pub use tuning::TuningReport;

pub type Dataset = LongitudinalDataset<f64>;
pub type Config = ModelConfig<f64>;
pub type Fit = FitResult<f64>;
pub type State = CoefficientState<f64>;
pub type Correlation = CorrelationModel<f64>;
pub type Report = TuningReport<f64>;
