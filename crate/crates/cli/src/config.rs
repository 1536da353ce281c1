//! Run configuration: an optional JSON file merged under command-line flags.

use std::path::{Path, PathBuf};

use factorlens_core::evaluation::{config_hash, LambdaChoice, StudyConfig};
use factorlens_core::DatasetConfig;
use serde::{Deserialize, Serialize};

use crate::TrainArgs;

/// Default sweep grid, in percentiles.
pub const DEFAULT_GRID: &str = "10:90:5";

/// Fields mirror the training flags; relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub study: StudyConfig,
    pub grid: Option<String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read run config {}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid run config {}: {e}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Training inputs after merging flags over the run config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: DatasetConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub study: StudyConfig,
    pub grid: String,
    pub hash: String,
}

pub fn resolve(args: &TrainArgs) -> anyhow::Result<Resolved> {
    let base = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let dataset_path = args
        .dataset
        .clone()
        .or(base.dataset)
        .ok_or_else(|| anyhow::anyhow!("--dataset is required (flag or run config)"))?;
    let seed = args
        .seed
        .or(base.seed)
        .ok_or_else(|| anyhow::anyhow!("--seed is required for commands that train"))?;
    let out = args
        .out
        .clone()
        .or(base.out)
        .ok_or_else(|| anyhow::anyhow!("--out is required (flag or run config)"))?;
    let mut study = base.study;
    if let Some(t) = args.trees {
        study.forest.n_trees = t;
    }
    if let Some(l) = args.lambda {
        if !(l.is_finite() && l >= 0.0) {
            anyhow::bail!("--lambda must be finite and non-negative, got {l}");
        }
        study.lambda = LambdaChoice::Fixed { lambda: l };
    }
    let dataset = DatasetConfig::from_file(&dataset_path)?;
    let hash = run_hash(&dataset, &study);
    Ok(Resolved {
        dataset,
        seed,
        out,
        study,
        grid: base.grid.unwrap_or_else(|| DEFAULT_GRID.to_string()),
        hash,
    })
}

/// Hash of everything that shapes the artifacts except the seed, which is
/// recorded separately. The CSV path enters by file name only so the hash
/// does not depend on the working directory.
pub fn run_hash(dataset: &DatasetConfig, study: &StudyConfig) -> String {
    let mut d = dataset.clone();
    d.path = d.path.file_name().map(PathBuf::from).unwrap_or_default();
    config_hash(&serde_json::json!({ "dataset": d, "study": study }))
}
