//! Model bundle: the single JSON document that carries a trained forest, its
//! fitted explainers and the dataset metadata needed to explain new instances.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Task;
use crate::explain::{
    fit_local, ExplainError, IncrementalModel, LambdaSelection, LinearFactorModel, LocalConfig,
    PartitionRule, SubglobalModel, Subspace, XaiType,
};
use crate::forest::Forest;
use crate::presentation::{build_table, ExplanationTable, OverrideError, ResolvedModel};
use crate::rng::{instance_seed, stream};

/// Layout version of the bundle document.
pub const BUNDLE_VERSION: u32 = 1;

/// Instance values may lie this many feature spans outside the observed range.
pub const RANGE_SLACK: f64 = 10.0;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read bundle {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("bundle has no {0} explainer")]
    MissingExplainer(XaiType),
    #[error("bundle has no partition rule (no subglobal or incremental explainer)")]
    NoRule,
    #[error("expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("value for `{name}` is not finite")]
    NonFinite { name: String },
    #[error("value {value} for `{name}` lies outside the accepted range [{low}, {high}]")]
    OutOfRange {
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error(transparent)]
    Override(#[from] OverrideError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation over the training rows.
    pub std: f64,
    pub median: f64,
}

impl FeatureMeta {
    /// Summary statistics of one column.
    pub fn from_column(name: &str, unit: &str, values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        FeatureMeta {
            name: name.to_string(),
            unit: unit.to_string(),
            min: sorted[0],
            max: sorted[m - 1],
            mean,
            std,
            median,
        }
    }

    /// Position of `value` within [min, max], clamped to [0, 1].
    pub fn meter(&self, value: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((value - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    /// Accepted input range: the observed range widened by ten spans.
    pub fn accepted_range(&self) -> (f64, f64) {
        let span = self.max - self.min;
        let span = if span > 0.0 { span } else { self.max.abs().max(1.0) };
        (self.min - RANGE_SLACK * span, self.max + RANGE_SLACK * span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub task: Task,
    pub target_unit: String,
    /// Multiplier the UI applies to targets for display (100 for probabilities).
    pub display_scale: f64,
    pub features: Vec<FeatureMeta>,
    /// Training rows in feature units, used for instance browsing.
    pub instances: Vec<Vec<f64>>,
    /// SHA-256 of the dataset and run configuration.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "xai_type", rename_all = "lowercase")]
pub enum ExplainerEntry {
    Global {
        model: LinearFactorModel,
        ridge_fallback: bool,
    },
    Subglobal {
        model: SubglobalModel,
    },
    Incremental {
        model: IncrementalModel,
        iterations: usize,
        final_loss: f64,
        converged: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        lambda_selection: Option<LambdaSelection>,
    },
    /// Local models are fit per instance at explanation time.
    Local {
        config: LocalConfig,
    },
}

impl ExplainerEntry {
    pub fn xai_type(&self) -> XaiType {
        match self {
            ExplainerEntry::Global { .. } => XaiType::Global,
            ExplainerEntry::Subglobal { .. } => XaiType::Subglobal,
            ExplainerEntry::Incremental { .. } => XaiType::Incremental,
            ExplainerEntry::Local { .. } => XaiType::Local,
        }
    }

    pub fn rule(&self) -> Option<&PartitionRule> {
        match self {
            ExplainerEntry::Subglobal { model } => Some(&model.rule),
            ExplainerEntry::Incremental { model, .. } => Some(&model.rule),
            _ => None,
        }
    }

    fn factor_count(&self) -> Option<usize> {
        match self {
            ExplainerEntry::Global { model, .. } => Some(model.n_features()),
            ExplainerEntry::Subglobal { model } => {
                Some(model.typical.n_features().max(model.outlier.n_features()))
            }
            ExplainerEntry::Incremental { model, .. } => {
                Some(model.base.n_features().max(model.delta.n_features()))
            }
            ExplainerEntry::Local { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub dataset_meta: DatasetMeta,
    pub forest: Forest,
    pub explainers: Vec<ExplainerEntry>,
    pub seed: u64,
}

/// One instance returned by [`ModelBundle::sample_instances`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSample {
    pub index: usize,
    pub values: Vec<f64>,
    pub prediction: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subspace: Option<Subspace>,
}

/// Subspace filter for instance browsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceFilter {
    All,
    Typical,
    Outlier,
    /// Half typical, half outlier (typical gets the extra one for odd counts).
    Balanced,
}

impl std::str::FromStr for InstanceFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(InstanceFilter::All),
            "typical" => Ok(InstanceFilter::Typical),
            "outlier" => Ok(InstanceFilter::Outlier),
            "balanced" => Ok(InstanceFilter::Balanced),
            other => Err(format!(
                "unknown subspace `{other}` (expected typical, outlier, balanced or all)"
            )),
        }
    }
}

impl ModelBundle {
    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let bundle: ModelBundle = serde_json::from_str(text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = std::fs::read_to_string(path).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.version != BUNDLE_VERSION {
            return Err(BundleError::Invalid(format!(
                "unsupported version {} (expected {BUNDLE_VERSION})",
                self.version
            )));
        }
        let p = self.dataset_meta.features.len();
        if p == 0 {
            return Err(BundleError::Invalid("no features".into()));
        }
        if self.forest.n_features != p {
            return Err(BundleError::Invalid(format!(
                "forest expects {} features, metadata lists {p}",
                self.forest.n_features
            )));
        }
        if self.forest.trees.is_empty() {
            return Err(BundleError::Invalid("forest has no trees".into()));
        }
        for e in &self.explainers {
            if let Some(k) = e.factor_count() {
                if k != p {
                    return Err(BundleError::Invalid(format!(
                        "{} explainer has {k} factors, expected {p}",
                        e.xai_type()
                    )));
                }
            }
            if let Some(rule) = e.rule() {
                if rule.feature_index >= p {
                    return Err(BundleError::Invalid(format!(
                        "{} rule refers to feature {}",
                        e.xai_type(),
                        rule.feature_index
                    )));
                }
            }
        }
        if let Some(row) = self.dataset_meta.instances.iter().find(|r| r.len() != p) {
            return Err(BundleError::Invalid(format!(
                "instance with {} values, expected {p}",
                row.len()
            )));
        }
        Ok(())
    }

    pub fn explainer(&self, xai: XaiType) -> Option<&ExplainerEntry> {
        self.explainers.iter().find(|e| e.xai_type() == xai)
    }

    /// The partition rule, taken from the Subglobal explainer if present,
    /// otherwise from the Incremental one.
    pub fn rule(&self) -> Option<&PartitionRule> {
        self.explainer(XaiType::Subglobal)
            .and_then(ExplainerEntry::rule)
            .or_else(|| self.explainer(XaiType::Incremental).and_then(ExplainerEntry::rule))
    }

    pub fn feature_std(&self) -> Vec<f64> {
        self.dataset_meta.features.iter().map(|f| f.std).collect()
    }

    /// Arity, finiteness and range checks on user-supplied values.
    pub fn check_values(&self, x: &[f64]) -> Result<(), BundleError> {
        let features = &self.dataset_meta.features;
        if x.len() != features.len() {
            return Err(BundleError::Arity {
                expected: features.len(),
                got: x.len(),
            });
        }
        for (f, &v) in features.iter().zip(x) {
            if !v.is_finite() {
                return Err(BundleError::NonFinite { name: f.name.clone() });
            }
            let (low, high) = f.accepted_range();
            if v < low || v > high {
                return Err(BundleError::OutOfRange {
                    name: f.name.clone(),
                    value: v,
                    low,
                    high,
                });
            }
        }
        Ok(())
    }

    /// Model pieces that explain `x` under `xai`. Local models are fit here
    /// with a seed derived from the bundle seed and the instance bits.
    pub fn resolve(&self, xai: XaiType, x: &[f64]) -> Result<ResolvedModel, BundleError> {
        let entry = self.explainer(xai).ok_or(BundleError::MissingExplainer(xai))?;
        Ok(match entry {
            ExplainerEntry::Global { model, .. } => ResolvedModel {
                xai_type: xai,
                effective: model.clone(),
                incremental_parts: None,
                rule: None,
            },
            ExplainerEntry::Subglobal { model } => ResolvedModel {
                xai_type: xai,
                effective: model.model_for(x).clone(),
                incremental_parts: None,
                rule: Some(model.rule.clone()),
            },
            ExplainerEntry::Incremental { model, .. } => {
                let outlier = model.rule.is_outlier(x);
                ResolvedModel {
                    xai_type: xai,
                    effective: if outlier {
                        model.outlier_effective()
                    } else {
                        model.base.clone()
                    },
                    incremental_parts: outlier.then(|| (model.base.clone(), model.delta.clone())),
                    rule: Some(model.rule.clone()),
                }
            }
            ExplainerEntry::Local { config } => {
                let cfg = LocalConfig {
                    seed: instance_seed(self.seed, x),
                    ..config.clone()
                };
                let fit = fit_local(x, &self.forest, &self.feature_std(), &cfg)?;
                ResolvedModel {
                    xai_type: xai,
                    effective: fit.model,
                    incremental_parts: None,
                    rule: None,
                }
            }
        })
    }

    /// Validate `x`, resolve the explainer and build its table.
    pub fn explain(
        &self,
        xai: XaiType,
        x: &[f64],
        overrides: &BTreeMap<String, f64>,
    ) -> Result<ExplanationTable, BundleError> {
        self.check_values(x)?;
        let resolved = self.resolve(xai, x)?;
        let prediction = self
            .forest
            .predict(x)
            .map_err(|e| BundleError::Invalid(e.to_string()))?;
        Ok(build_table(
            &resolved,
            &self.dataset_meta.features,
            &self.dataset_meta.target_unit,
            x,
            prediction,
            overrides,
        )?)
    }

    /// Seeded sample of stored instances with their predictions.
    pub fn sample_instances(
        &self,
        filter: InstanceFilter,
        count: usize,
    ) -> Result<Vec<InstanceSample>, BundleError> {
        let rule = self.rule();
        if rule.is_none() && filter != InstanceFilter::All {
            return Err(BundleError::NoRule);
        }
        let rows = &self.dataset_meta.instances;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut stream(self.seed, "instances", 0));

        let (want_typical, want_outlier) = match filter {
            InstanceFilter::All => (count, 0),
            InstanceFilter::Typical => (count, 0),
            InstanceFilter::Outlier => (0, count),
            InstanceFilter::Balanced => (count - count / 2, count / 2),
        };
        let mut typical = Vec::new();
        let mut outlier = Vec::new();
        for i in order {
            if typical.len() >= want_typical && outlier.len() >= want_outlier {
                break;
            }
            let sub = rule.map(|r| r.subspace_of(&rows[i]));
            let to_outlier = filter != InstanceFilter::All && sub == Some(Subspace::Outlier);
            if to_outlier {
                if outlier.len() < want_outlier {
                    outlier.push((i, sub));
                }
            } else if typical.len() < want_typical {
                typical.push((i, sub));
            }
        }
        typical.extend(outlier);
        typical
            .into_iter()
            .map(|(index, subspace)| {
                let values = rows[index].clone();
                let prediction = self
                    .forest
                    .predict(&values)
                    .map_err(|e| BundleError::Invalid(e.to_string()))?;
                Ok(InstanceSample {
                    index,
                    values,
                    prediction,
                    subspace,
                })
            })
            .collect()
    }
}

/// Feature metadata from a training matrix.
pub fn feature_meta(names: &[(String, String)], x: ArrayView2<'_, f64>) -> Vec<FeatureMeta> {
    names
        .iter()
        .enumerate()
        .map(|(j, (name, unit))| FeatureMeta::from_column(name, unit, &x.column(j).to_vec()))
        .collect()
}
