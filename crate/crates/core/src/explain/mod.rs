//! Linear factor explainers.
//!
//! * [`fit_global`]: one OLS model over all rows.
//! * [`fit_subglobal`]: a decision stump with an OLS model per subspace.
//! * [`fit_incremental`]: base factors plus L1-sparse deltas for the outlier
//!   subspace.
//! * [`fit_local`]: a kernel-weighted OLS model around one instance.

mod incremental;
mod linear;
mod local;
pub mod optim;
mod partition;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use incremental::{
    fit_incremental, incremental_objective, lambda_max, select_lambda, IncrementalFit,
    IncrementalModel, IncrementalOptions, LambdaSelection, DEFAULT_LAMBDA_FRACTIONS,
};
pub use linear::{fit_global, fit_ols, GlobalFit, LinearFactorModel, MIN_FIT_ROWS};
pub use local::{fit_local, LocalConfig, LocalFit};
pub use partition::{
    candidate_thresholds, fit_subglobal, fit_subglobal_with_rule, min_subspace_rows, percentile,
    PartitionRule, SplitCandidate, SubglobalFit, SubglobalModel, Subspace, TypicalSide,
    PERCENTILE_GRID_ROWS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("need at least {needed} rows to fit, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("no admissible split: every candidate leaves a subspace below {min_rows} rows")]
    NoAdmissibleSplit { min_rows: usize },
    #[error("optimizer diverged (loss became non-finite at step size {step})")]
    Divergence { step: f64 },
    #[error("regularization weight must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("feature {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("instance has {got} features, model expects {expected}")]
    Arity { expected: usize, got: usize },
    #[error("invalid local config: {0}")]
    InvalidLocalConfig(String),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XaiType {
    Global,
    Subglobal,
    Incremental,
    Local,
}

impl XaiType {
    pub const ALL: [XaiType; 4] = [
        XaiType::Global,
        XaiType::Subglobal,
        XaiType::Incremental,
        XaiType::Local,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            XaiType::Global => "global",
            XaiType::Subglobal => "subglobal",
            XaiType::Incremental => "incremental",
            XaiType::Local => "local",
        }
    }
}

impl std::fmt::Display for XaiType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for XaiType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(XaiType::Global),
            "subglobal" => Ok(XaiType::Subglobal),
            "incremental" => Ok(XaiType::Incremental),
            "local" => Ok(XaiType::Local),
            other => Err(format!("unknown xai type `{other}`")),
        }
    }
}

/// Anything that maps an instance to a scalar prediction.
pub trait Blackbox: Sync {
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl Blackbox for crate::forest::Forest {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }
}

impl<F> Blackbox for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict_row(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

pub(crate) fn check_instance(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(ExplainError::Arity {
            expected,
            got: x.len(),
        });
    }
    match x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        Some((index, &value)) => Err(ExplainError::NonFinite { index, value }),
        None => Ok(()),
    }
}
