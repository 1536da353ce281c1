//! Sparse linear factor explainers for tabular blackbox predictors.
//!
//! The crate trains a random-forest blackbox, fits Global, Subglobal,
//! Incremental and Local linear factor surrogates against its predictions,
//! measures how faithfully each surrogate tracks the blackbox, and turns any
//! (model, instance) pair into a tabular explanation with display rounding.

pub mod bundle;
pub mod data;
pub mod evaluation;
pub mod explain;
pub mod forest;
pub mod linalg;
pub mod presentation;
pub mod rng;
pub mod split;

pub use bundle::{DatasetMeta, ExplainerEntry, FeatureMeta, ModelBundle};
pub use data::{Dataset, DatasetConfig, FeatureSpec, Task, Transform};
pub use explain::{
    Blackbox, IncrementalModel, LinearFactorModel, LocalConfig, PartitionRule, Subspace,
    SubglobalModel, TypicalSide, XaiType,
};
pub use forest::{Forest, ForestConfig};
pub use presentation::{round_display, DisplayRole, ExplanationTable};
pub use split::SplitPlan;
