//! Modeling study: predictor metrics, explainer unfaithfulness and glassbox
//! performance per subspace over cross-validation folds, plus the heldout
//! summary and the threshold sweep.

mod export;
mod glassbox;
mod sweep;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{feature_meta, DatasetMeta, ExplainerEntry, FeatureMeta, ModelBundle, BUNDLE_VERSION};
use crate::data::{DataError, Dataset, Task};
use crate::explain::{
    fit_global, fit_incremental, fit_local, fit_subglobal, select_lambda,
    Blackbox, ExplainError, GlobalFit, IncrementalFit, IncrementalModel, IncrementalOptions,
    LambdaSelection, LinearFactorModel, LocalConfig, PartitionRule, SubglobalFit, SubglobalModel,
    Subspace, XaiType, DEFAULT_LAMBDA_FRACTIONS,
};
use crate::forest::{evaluate_predictor, train_forest, Forest, ForestConfig, ForestError, PredictorMetrics};
use crate::rng::{derive_seed, instance_seed, stream};
use crate::split::{make_split_plan, SplitPlan};

pub use export::{
    config_hash, study_csv, surface_csv, surface_grid, sweep_csv, sweep_factors_csv, ArtifactMeta,
    SurfacePoint,
};
pub use glassbox::{fit_glassbox, fit_logistic, GlassboxFamily, GlassboxKind, GlassboxModel, LogisticFit};
pub use sweep::{parse_grid, threshold_sweep, SweepPoint, SweepResult, SweepStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("no rows to evaluate after filtering")]
    EmptyEvaluation,
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// How the Incremental regularization weight is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LambdaChoice {
    /// Largest `fraction * lambda_max` whose training MAE stays within
    /// `tolerance` of the unregularized fit.
    Auto { fractions: Vec<f64>, tolerance: f64 },
    Fixed { lambda: f64 },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Auto {
            fractions: DEFAULT_LAMBDA_FRACTIONS.to_vec(),
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub folds: usize,
    pub test_fraction: f64,
    pub forest: ForestConfig,
    pub local: LocalConfig,
    /// Local unfaithfulness is measured on at most this many rows per partition.
    pub local_max_rows: usize,
    pub lambda: LambdaChoice,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            folds: 5,
            test_fraction: 0.2,
            forest: ForestConfig::default(),
            local: LocalConfig::default(),
            local_max_rows: 300,
            lambda: LambdaChoice::default(),
        }
    }
}

/// Report scale for a task: classification probabilities are shown in percent.
pub fn display_scale(task: Task) -> f64 {
    match task {
        Task::Regression => 1.0,
        Task::Classification => 100.0,
    }
}

/// Any fitted explainer, ready to estimate instances.
#[derive(Debug, Clone)]
pub enum Explainer<'a> {
    Global(&'a LinearFactorModel),
    Subglobal(&'a SubglobalModel),
    Incremental(&'a IncrementalModel),
    /// A fresh local model is fit per instance; the seed mixes `seed` with
    /// the instance bits.
    Local {
        config: &'a LocalConfig,
        feature_std: &'a [f64],
        seed: u64,
    },
}

impl Explainer<'_> {
    pub fn xai_type(&self) -> XaiType {
        match self {
            Explainer::Global(_) => XaiType::Global,
            Explainer::Subglobal(_) => XaiType::Subglobal,
            Explainer::Incremental(_) => XaiType::Incremental,
            Explainer::Local { .. } => XaiType::Local,
        }
    }

    pub fn estimate(&self, x: &[f64], blackbox: &dyn Blackbox) -> Result<f64> {
        Ok(match self {
            Explainer::Global(m) => m.estimate(x)?,
            Explainer::Subglobal(m) => m.estimate(x)?,
            Explainer::Incremental(m) => m.estimate(x)?,
            Explainer::Local {
                config,
                feature_std,
                seed,
            } => {
                let cfg = LocalConfig {
                    seed: instance_seed(*seed, x),
                    ..(*config).clone()
                };
                fit_local(x, blackbox, feature_std, &cfg)?.model.eval(x)
            }
        })
    }
}

/// Per-subspace sums of a per-row score (absolute error or correctness).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubspaceTally {
    pub sum_typical: f64,
    pub n_typical: usize,
    pub sum_outlier: f64,
    pub n_outlier: usize,
}

impl SubspaceTally {
    pub fn add(&mut self, subspace: Subspace, value: f64) {
        match subspace {
            Subspace::Typical => {
                self.sum_typical += value;
                self.n_typical += 1;
            }
            Subspace::Outlier => {
                self.sum_outlier += value;
                self.n_outlier += 1;
            }
        }
    }

    /// `(combined, typical, outlier)` means times `scale`; combined is the
    /// sample-weighted mean of the subspace values.
    pub fn means(&self, scale: f64) -> SubspaceValues {
        let mean = |s: f64, n: usize| (n > 0).then(|| scale * s / n as f64);
        let typical = mean(self.sum_typical, self.n_typical);
        let outlier = mean(self.sum_outlier, self.n_outlier);
        SubspaceValues {
            combined: weighted_combined(self.n_typical, typical, self.n_outlier, outlier),
            typical,
            outlier,
            n_typical: self.n_typical,
            n_outlier: self.n_outlier,
        }
    }
}

/// `(n_t * typical + n_o * outlier) / (n_t + n_o)`, skipping empty subspaces.
pub fn weighted_combined(
    n_typical: usize,
    typical: Option<f64>,
    n_outlier: usize,
    outlier: Option<f64>,
) -> Option<f64> {
    let n = n_typical + n_outlier;
    if n == 0 {
        return None;
    }
    let t = typical.map_or(0.0, |v| n_typical as f64 * v);
    let o = outlier.map_or(0.0, |v| n_outlier as f64 * v);
    Some((t + o) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceValues {
    pub combined: Option<f64>,
    pub typical: Option<f64>,
    pub outlier: Option<f64>,
    pub n_typical: usize,
    pub n_outlier: usize,
}

impl SubspaceValues {
    pub fn get(&self, label: SubspaceLabel) -> Option<f64> {
        match label {
            SubspaceLabel::Combined => self.combined,
            SubspaceLabel::Typical => self.typical,
            SubspaceLabel::Outlier => self.outlier,
        }
    }

    pub fn count(&self, label: SubspaceLabel) -> usize {
        match label {
            SubspaceLabel::Combined => self.n_typical + self.n_outlier,
            SubspaceLabel::Typical => self.n_typical,
            SubspaceLabel::Outlier => self.n_outlier,
        }
    }
}

fn subspace_of(rule: Option<&PartitionRule>, x: &[f64]) -> Subspace {
    rule.map_or(Subspace::Typical, |r| r.subspace_of(x))
}

/// Per-subspace mean absolute difference between explainer and blackbox.
pub fn unfaithfulness_tally(
    explainer: &Explainer<'_>,
    blackbox: &dyn Blackbox,
    x: ArrayView2<'_, f64>,
    rule: Option<&PartitionRule>,
) -> Result<SubspaceTally> {
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let errors: Vec<(Subspace, f64)> = rows
        .par_iter()
        .map(|row| {
            let e = (explainer.estimate(row, blackbox)? - blackbox.predict_row(row)).abs();
            Ok((subspace_of(rule, row), e))
        })
        .collect::<Result<_>>()?;
    let mut tally = SubspaceTally::default();
    for (s, e) in errors {
        tally.add(s, e);
    }
    Ok(tally)
}

/// Mean `|estimate - prediction|` over rows, optionally restricted to one
/// subspace of `rule`.
pub fn unfaithfulness(
    explainer: &Explainer<'_>,
    blackbox: &dyn Blackbox,
    x: ArrayView2<'_, f64>,
    rule: Option<&PartitionRule>,
    filter: Option<Subspace>,
) -> Result<f64> {
    let tally = unfaithfulness_tally(explainer, blackbox, x, rule)?;
    let v = tally.means(1.0);
    let value = match filter {
        None => v.combined,
        Some(Subspace::Typical) => v.typical,
        Some(Subspace::Outlier) => v.outlier,
    };
    value.ok_or(EvalError::EmptyEvaluation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceLabel {
    Combined,
    Typical,
    Outlier,
}

impl SubspaceLabel {
    pub const ALL: [SubspaceLabel; 3] = [SubspaceLabel::Combined, SubspaceLabel::Typical, SubspaceLabel::Outlier];

    pub fn as_str(self) -> &'static str {
        match self {
            SubspaceLabel::Combined => "combined",
            SubspaceLabel::Typical => "typical",
            SubspaceLabel::Outlier => "outlier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    /// Explainer vs predictor.
    Unfaithfulness,
    /// Model vs ground truth (the AI model, or an explainer family trained on labels).
    Performance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Validation,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean absolute error in target units (percentage points for probabilities).
    Mae,
    /// Classification accuracy in percent.
    AccuracyPct,
}

/// One (section, partition, model, subspace) cell with per-fold values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub section: Section,
    pub partition: Partition,
    /// `None` is the AI model (the forest itself).
    pub xai_type: Option<XaiType>,
    pub subspace: SubspaceLabel,
    pub metric: Metric,
    pub mean: Option<f64>,
    /// Sample standard deviation over folds.
    pub std: Option<f64>,
    pub folds: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub flags: Vec<String>,
}

impl ReportCell {
    pub fn model_label(&self) -> &'static str {
        self.xai_type.map_or("ai", XaiType::as_str)
    }
}

/// Mean and sample standard deviation of the available values.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Explainers fit against one forest's predictions.
#[derive(Debug, Clone)]
pub struct FittedExplainers {
    pub global: GlobalFit,
    pub subglobal: SubglobalFit,
    pub incremental: IncrementalFit,
    pub lambda_selection: Option<LambdaSelection>,
}

/// Fit Global, Subglobal and Incremental (reusing the Subglobal rule) on `(x, yhat)`.
pub fn fit_explainers(
    x: ArrayView2<'_, f64>,
    yhat: ArrayView1<'_, f64>,
    lambda: &LambdaChoice,
) -> Result<FittedExplainers> {
    let global = fit_global(x, yhat)?;
    let subglobal = fit_subglobal(x, yhat)?;
    let opts = IncrementalOptions::default();
    let rule = &subglobal.model.rule;
    let (value, selection) = match lambda {
        LambdaChoice::Fixed { lambda } => (*lambda, None),
        LambdaChoice::Auto { fractions, tolerance } => {
            let sel = select_lambda(x, yhat, rule, fractions, *tolerance, &opts)?;
            (sel.lambda, Some(sel))
        }
    };
    let incremental = fit_incremental(x, yhat, value, Some(rule), &opts)?;
    Ok(FittedExplainers {
        global,
        subglobal,
        incremental,
        lambda_selection: selection,
    })
}

/// Everything measured on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub predictor: PredictorMetrics,
    pub rule: PartitionRule,
    pub lambda: f64,
    pub incremental_converged: bool,
    /// `(xai_type, validation unfaithfulness)` for all four types.
    pub validation: Vec<(XaiType, SubspaceValues)>,
    /// `(xai_type, training unfaithfulness)` for Global/Subglobal/Incremental.
    pub train: Vec<(XaiType, SubspaceValues)>,
    /// Ground-truth performance on validation; `None` key is the AI model.
    pub performance: Vec<(Option<XaiType>, SubspaceValues)>,
    pub glassbox_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingStudy {
    pub version: String,
    pub dataset: String,
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    pub scale: f64,
    pub folds: Vec<FoldResult>,
    pub cells: Vec<ReportCell>,
}

impl ModelingStudy {
    pub fn cell(
        &self,
        section: Section,
        partition: Partition,
        xai_type: Option<XaiType>,
        subspace: SubspaceLabel,
    ) -> Option<&ReportCell> {
        self.cells.iter().find(|c| {
            c.section == section && c.partition == partition && c.xai_type == xai_type && c.subspace == subspace
        })
    }
}

fn rows_view(data: &Dataset, rows: &[usize]) -> (Array2<f64>, Array1<f64>) {
    (data.x.select(Axis(0), rows), data.y.select(Axis(0), rows))
}

/// At most `max` rows of `x`, chosen with a seeded sample and kept in order.
fn subsample(x: ArrayView2<'_, f64>, max: usize, seed: u64) -> Array2<f64> {
    if x.nrows() <= max {
        return x.to_owned();
    }
    let mut idx = sample(&mut stream(seed, "local-rows", 0), x.nrows(), max).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

fn column_std(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.columns()
        .into_iter()
        .map(|c| {
            let n = c.len() as f64;
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

fn performance_tally(pred: &[f64], x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, task: Task, rule: &PartitionRule) -> SubspaceTally {
    let mut tally = SubspaceTally::default();
    for (k, row) in x.rows().into_iter().enumerate() {
        let s = rule.subspace_of(row.as_slice().expect("standard layout"));
        let score = match task {
            Task::Regression => (pred[k] - y[k]).abs(),
            Task::Classification => f64::from(u8::from((pred[k] >= 0.5) == (y[k] >= 0.5))),
        };
        tally.add(s, score);
    }
    tally
}

fn forest_config(config: &StudyConfig, seed: u64, tag: &str, index: u64) -> ForestConfig {
    ForestConfig {
        seed: derive_seed(seed, tag, index),
        ..config.forest.clone()
    }
}

fn run_fold(data: &Dataset, plan: &SplitPlan, k: usize, seed: u64, config: &StudyConfig) -> Result<FoldResult> {
    let scale = display_scale(data.task);
    let train_rows = plan.fold_training_rows(k);
    let val_rows = plan.validation_rows(k);
    let (xtr, ytr) = rows_view(data, &train_rows);
    let (xva, yva) = rows_view(data, &val_rows);

    let forest = train_forest(xtr.view(), ytr.view(), data.task, &forest_config(config, seed, "fold-forest", k as u64))?;
    let yhat_tr = Array1::from(forest.predict_rows(xtr.view())?);
    let predictor = evaluate_predictor(&forest, xva.view(), yva.view())?;

    let fits = fit_explainers(xtr.view(), yhat_tr.view(), &config.lambda)?;
    let rule = fits.subglobal.model.rule.clone();
    let std = column_std(xtr.view());
    let local_seed = derive_seed(seed, "fold-local", k as u64);
    let explainers = [
        Explainer::Global(&fits.global.model),
        Explainer::Subglobal(&fits.subglobal.model),
        Explainer::Incremental(&fits.incremental.model),
        Explainer::Local {
            config: &config.local,
            feature_std: &std,
            seed: local_seed,
        },
    ];

    let mut validation = Vec::new();
    let mut train = Vec::new();
    for e in &explainers {
        let tally = if matches!(e, Explainer::Local { .. }) {
            let xs = subsample(xva.view(), config.local_max_rows, local_seed);
            unfaithfulness_tally(e, &forest, xs.view(), Some(&rule))?
        } else {
            train.push((e.xai_type(), unfaithfulness_tally(e, &forest, xtr.view(), Some(&rule))?.means(scale)));
            unfaithfulness_tally(e, &forest, xva.view(), Some(&rule))?
        };
        validation.push((e.xai_type(), tally.means(scale)));
    }

    let perf_scale = match data.task {
        Task::Regression => 1.0,
        Task::Classification => 100.0,
    };
    let forest_val = forest.predict_rows(xva.view())?;
    let mut performance = vec![(
        None,
        performance_tally(&forest_val, xva.view(), yva.view(), data.task, &rule).means(perf_scale),
    )];
    let lambda_fraction = fits
        .lambda_selection
        .as_ref()
        .filter(|s| s.lambda_max > 0.0)
        .map(|s| s.lambda / s.lambda_max);
    let mut glassbox_flags = Vec::new();
    for family in GlassboxFamily::ALL {
        let gb = fit_glassbox(family, xtr.view(), ytr.view(), data.task, &rule, lambda_fraction, fits.incremental.model.lambda)?;
        if !gb.converged {
            glassbox_flags.push(format!("{}:not_converged", family.xai_type()));
        }
        let pred: Vec<f64> = xva.rows().into_iter().map(|r| gb.predict(r.as_slice().expect("standard layout"))).collect();
        performance.push((
            Some(family.xai_type()),
            performance_tally(&pred, xva.view(), yva.view(), data.task, &rule).means(perf_scale),
        ));
    }

    Ok(FoldResult {
        fold: k,
        n_train: train_rows.len(),
        n_validation: val_rows.len(),
        predictor,
        rule,
        lambda: fits.incremental.model.lambda,
        incremental_converged: fits.incremental.converged,
        validation,
        train,
        performance,
        glassbox_flags,
    })
}

fn collect_cells(folds: &[FoldResult], task: Task) -> Vec<ReportCell> {
    let perf_metric = match task {
        Task::Regression => Metric::Mae,
        Task::Classification => Metric::AccuracyPct,
    };
    let mut cells = Vec::new();
    let mut push = |section, partition, xai_type: Option<XaiType>, metric, pick: &dyn Fn(&FoldResult) -> Option<SubspaceValues>, flags: Vec<String>| {
        for subspace in SubspaceLabel::ALL {
            let values: Vec<Option<SubspaceValues>> = folds.iter().map(pick).collect();
            let per_fold: Vec<Option<f64>> = values.iter().map(|v| v.and_then(|v| v.get(subspace))).collect();
            let counts: Vec<usize> = values.iter().map(|v| v.map_or(0, |v| v.count(subspace))).collect();
            let (mean, std) = mean_std(&per_fold);
            cells.push(ReportCell {
                section,
                partition,
                xai_type,
                subspace,
                metric,
                mean,
                std,
                folds: per_fold,
                counts,
                flags: flags.clone(),
            });
        }
    };
    for xai in XaiType::ALL {
        let flags = match xai {
            XaiType::Incremental if folds.iter().any(|f| !f.incremental_converged) => vec!["not_converged".to_string()],
            _ => Vec::new(),
        };
        push(Section::Unfaithfulness, Partition::Validation, Some(xai), Metric::Mae, &|f: &FoldResult| {
            f.validation.iter().find(|(t, _)| *t == xai).map(|(_, v)| *v)
        }, flags);
    }
    for xai in [XaiType::Global, XaiType::Subglobal, XaiType::Incremental] {
        push(Section::Unfaithfulness, Partition::Train, Some(xai), Metric::Mae, &|f: &FoldResult| {
            f.train.iter().find(|(t, _)| *t == xai).map(|(_, v)| *v)
        }, Vec::new());
    }
    for model in [None, Some(XaiType::Global), Some(XaiType::Subglobal), Some(XaiType::Incremental)] {
        let flags: Vec<String> = model
            .map(|m| {
                let tag = format!("{m}:not_converged");
                if folds.iter().any(|f| f.glassbox_flags.contains(&tag)) {
                    vec!["not_converged".to_string()]
                } else {
                    Vec::new()
                }
            })
            .unwrap_or_default();
        push(Section::Performance, Partition::Validation, model, perf_metric, &|f: &FoldResult| {
            f.performance.iter().find(|(t, _)| *t == model).map(|(_, v)| *v)
        }, flags);
    }
    cells
}

/// Cross-validated study: per fold, train the forest on the fold's training
/// rows, fit all four explainers against its predictions and evaluate on the
/// fold's validation rows.
pub fn run_modeling_study(data: &Dataset, seed: u64, config: &StudyConfig, config_hash: &str) -> Result<ModelingStudy> {
    if config.folds < 2 {
        return Err(EvalError::InvalidConfig("at least 2 folds are required".into()));
    }
    let plan = make_split_plan(data.n_rows(), seed, config.test_fraction, config.folds)?;
    let folds: Vec<FoldResult> = (0..config.folds)
        .into_par_iter()
        .map(|k| run_fold(data, &plan, k, seed, config))
        .collect::<Result<_>>()?;
    let cells = collect_cells(&folds, data.task);
    Ok(ModelingStudy {
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: data.name.clone(),
        task: data.task,
        seed,
        config_hash: config_hash.to_string(),
        scale: display_scale(data.task),
        folds,
        cells,
    })
}

/// Heldout summary: forest trained on the full training partition and
/// evaluated on the test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSummary {
    pub version: String,
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub n_train: usize,
    pub n_test: usize,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub predictor: PredictorMetrics,
    pub rule: PartitionRule,
    pub rule_feature: String,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_selection: Option<LambdaSelection>,
    pub incremental_iterations: usize,
    pub incremental_converged: bool,
    /// Test-row unfaithfulness per explainer.
    pub unfaithfulness: Vec<(XaiType, SubspaceValues)>,
}

/// Heldout models plus their summary.
#[derive(Debug, Clone)]
pub struct Heldout {
    pub summary: HeldoutSummary,
    pub forest: Forest,
    pub fits: FittedExplainers,
    pub features: Vec<FeatureMeta>,
    pub train_x: Array2<f64>,
    pub train_yhat: Array1<f64>,
}

pub fn run_heldout(data: &Dataset, seed: u64, config: &StudyConfig, config_hash: &str) -> Result<Heldout> {
    let plan = make_split_plan(data.n_rows(), seed, config.test_fraction, config.folds)?;
    let train_rows = plan.train_rows();
    let test_rows = plan.test_rows();
    if test_rows.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let (xtr, ytr) = rows_view(data, &train_rows);
    let (xte, yte) = rows_view(data, &test_rows);
    let forest = train_forest(xtr.view(), ytr.view(), data.task, &forest_config(config, seed, "heldout-forest", 0))?;
    let predictor = evaluate_predictor(&forest, xte.view(), yte.view())?;
    let yhat = Array1::from(forest.predict_rows(xtr.view())?);
    let fits = fit_explainers(xtr.view(), yhat.view(), &config.lambda)?;
    let rule = fits.subglobal.model.rule.clone();
    let names: Vec<(String, String)> = data.features.iter().map(|f| (f.name.clone(), f.unit.clone())).collect();
    let features = feature_meta(&names, xtr.view());
    let std: Vec<f64> = features.iter().map(|f| f.std).collect();
    let scale = display_scale(data.task);
    let local_seed = derive_seed(seed, "heldout-local", 0);
    let explainers = [
        Explainer::Global(&fits.global.model),
        Explainer::Subglobal(&fits.subglobal.model),
        Explainer::Incremental(&fits.incremental.model),
        Explainer::Local {
            config: &config.local,
            feature_std: &std,
            seed: local_seed,
        },
    ];
    let mut unfaith = Vec::new();
    for e in &explainers {
        let xs = match e {
            Explainer::Local { .. } => subsample(xte.view(), config.local_max_rows, local_seed),
            _ => xte.clone(),
        };
        unfaith.push((e.xai_type(), unfaithfulness_tally(e, &forest, xs.view(), Some(&rule))?.means(scale)));
    }
    let summary = HeldoutSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: data.name.clone(),
        seed,
        config_hash: config_hash.to_string(),
        n_train: train_rows.len(),
        n_test: test_rows.len(),
        rows_read: data.rows_read,
        rows_dropped: data.rows_dropped,
        predictor,
        rule_feature: data.features[rule.feature_index].name.clone(),
        rule,
        lambda: fits.incremental.model.lambda,
        lambda_selection: fits.lambda_selection.clone(),
        incremental_iterations: fits.incremental.iterations,
        incremental_converged: fits.incremental.converged,
        unfaithfulness: unfaith,
    };
    Ok(Heldout {
        summary,
        forest,
        fits,
        features,
        train_x: xtr,
        train_yhat: yhat,
    })
}

impl Heldout {
    /// Bundle the heldout forest and explainers for serving.
    pub fn bundle(&self, data: &Dataset, seed: u64, config: &StudyConfig, config_hash: &str) -> ModelBundle {
        let fits = &self.fits;
        ModelBundle {
            version: BUNDLE_VERSION,
            dataset_meta: DatasetMeta {
                name: data.name.clone(),
                task: data.task,
                target_unit: data.target_unit.clone(),
                display_scale: display_scale(data.task),
                features: self.features.clone(),
                instances: self.train_x.rows().into_iter().map(|r| r.to_vec()).collect(),
                config_hash: config_hash.to_string(),
            },
            forest: self.forest.clone(),
            explainers: vec![
                ExplainerEntry::Global {
                    model: fits.global.model.clone(),
                    ridge_fallback: fits.global.ridge_fallback,
                },
                ExplainerEntry::Subglobal {
                    model: fits.subglobal.model.clone(),
                },
                ExplainerEntry::Incremental {
                    model: fits.incremental.model.clone(),
                    iterations: fits.incremental.iterations,
                    final_loss: fits.incremental.final_loss,
                    converged: fits.incremental.converged,
                    lambda_selection: fits.lambda_selection.clone(),
                },
                ExplainerEntry::Local {
                    config: config.local.clone(),
                },
            ],
            seed,
        }
    }
}
