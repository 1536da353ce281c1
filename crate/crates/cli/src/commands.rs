use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use factorlens_core::bundle::BundleError;
use factorlens_core::data::{load_dataset, DataError};
use factorlens_core::evaluation::{
    display_scale, parse_grid, run_heldout, run_modeling_study, study_csv, surface_csv, surface_grid,
    sweep_csv, sweep_factors_csv, threshold_sweep, ArtifactMeta, EvalError, SweepResult,
};
use factorlens_core::{ExplainerEntry, ModelBundle, XaiType};
use serde::Serialize;

use crate::config::{resolve, Resolved};
use crate::{ExplainArgs, Format, ServeArgs, SweepArgs, TrainArgs};

/// Grid resolution of the exported decision surface.
const SURFACE_STEPS: usize = 25;
/// Features spanned by the decision surface (second and fourth attribute).
const SURFACE_FEATURES: (usize, usize) = (1, 3);

pub const EXIT_USER: u8 = 2;
pub const EXIT_ENV: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub source: anyhow::Error,
}

pub type Result<T> = std::result::Result<T, CliError>;

fn user(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_USER,
        source: e.into(),
    }
}

fn env(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: EXIT_ENV,
        source: e.into(),
    }
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::Io { .. } => env(e),
        _ => user(e),
    }
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Data(d) => data_error(d),
        other => user(other),
    }
}

fn bundle_error(e: BundleError) -> CliError {
    match e {
        BundleError::Io { ref source, .. } if source.kind() != std::io::ErrorKind::NotFound => env(e),
        _ => user(e),
    }
}

fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// Refuse to clobber existing artifacts unless `force`, then create `dir`.
fn prepare_out(dir: &Path, names: &[&str], force: bool) -> Result<()> {
    if !force {
        let existing: Vec<&str> = names.iter().copied().filter(|n| dir.join(n).exists()).collect();
        if !existing.is_empty() {
            return Err(user(anyhow!(
                "{} already contains {}; pass --force to overwrite",
                dir.display(),
                existing.join(", ")
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| env(anyhow!("cannot create {}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| env(anyhow!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

const STUDY_ARTIFACTS: [&str; 5] = ["table2.csv", "table2.json", "heldout.json", "bundle.json", "surface.csv"];

pub fn study(args: &TrainArgs) -> Result<()> {
    let run = resolve(args).map_err(config_error)?;
    let data = load_dataset(&run.dataset).map_err(data_error)?;
    prepare_out(&run.out, &STUDY_ARTIFACTS, args.force)?;
    eprintln!(
        "{}: {} rows ({} dropped), seed {}",
        data.name,
        data.n_rows(),
        data.rows_dropped,
        run.seed
    );
    let started = Instant::now();
    let study = run_modeling_study(&data, run.seed, &run.study, &run.hash).map_err(eval_error)?;
    let held = run_heldout(&data, run.seed, &run.study, &run.hash).map_err(eval_error)?;
    let bundle = held.bundle(&data, run.seed, &run.study, &run.hash);
    let meta = ArtifactMeta {
        version: version(),
        seed: run.seed,
        config_hash: run.hash.clone(),
    };
    let (fa, fb) = SURFACE_FEATURES;
    let surface = surface_grid(&bundle, fa, fb, SURFACE_STEPS);
    let names = data.feature_names();

    write(&run.out, "table2.csv", &study_csv(&study))?;
    write(&run.out, "table2.json", &json(&study))?;
    write(&run.out, "heldout.json", &json(&held.summary))?;
    write(&run.out, "bundle.json", &bundle.to_json())?;
    write(&run.out, "surface.csv", &surface_csv(&meta, &surface, &names[fa], &names[fb]))?;

    print_study_summary(&study, &held.summary);
    eprintln!("wrote {} artifacts to {} in {:.1?}", STUDY_ARTIFACTS.len(), run.out.display(), started.elapsed());
    Ok(())
}

fn config_error(e: anyhow::Error) -> CliError {
    match e.downcast::<DataError>() {
        Ok(d) => data_error(d),
        Err(e) => user(e),
    }
}

fn print_study_summary(
    study: &factorlens_core::evaluation::ModelingStudy,
    held: &factorlens_core::evaluation::HeldoutSummary,
) {
    use factorlens_core::evaluation::{Partition, Section, SubspaceLabel};
    println!("{} ({} folds, seed {})", study.dataset, study.folds.len(), study.seed);
    println!("validation unfaithfulness, combined (mean ± std):");
    for xai in XaiType::ALL {
        if let Some(c) = study.cell(Section::Unfaithfulness, Partition::Validation, Some(xai), SubspaceLabel::Combined) {
            println!("  {:<12} {} ± {}", xai.as_str(), fmt_opt(c.mean), fmt_opt(c.std));
        }
    }
    let p = &held.predictor;
    println!(
        "heldout predictor: mae {} r2 {} accuracy {} auc {}",
        fmt_opt(Some(p.mae)),
        fmt_opt(p.r2),
        fmt_opt(p.accuracy),
        fmt_opt(p.auc)
    );
    println!(
        "learned rule: {} {} {} (lambda {})",
        held.rule_feature,
        match held.rule.typical_side {
            factorlens_core::TypicalSide::Below => "≥",
            factorlens_core::TypicalSide::AtOrAbove => "<",
        },
        held.rule.threshold,
        held.lambda
    );
}

/// Inputs to a sweep: training rows with forest predictions, and the
/// learned rule and lambda that anchor it.
struct SweepInputs {
    x: ndarray::Array2<f64>,
    yhat: ndarray::Array1<f64>,
    names: Vec<String>,
    lambda: f64,
    rule_feature: usize,
    learned_threshold: f64,
    scale: f64,
    seed: u64,
    hash: String,
}

fn inputs_from_bundle(bundle: &ModelBundle) -> Result<SweepInputs> {
    let (lambda, rule) = bundle
        .explainers
        .iter()
        .find_map(|e| match e {
            ExplainerEntry::Incremental { model, .. } => Some((model.lambda, model.rule.clone())),
            _ => None,
        })
        .ok_or_else(|| user(anyhow!("bundle has no incremental explainer to take lambda from")))?;
    let x = rows_to_matrix(&bundle.dataset_meta.instances).map_err(user)?;
    let yhat = ndarray::Array1::from(bundle.forest.predict_rows(x.view()).map_err(user)?);
    Ok(SweepInputs {
        x,
        yhat,
        names: bundle.dataset_meta.features.iter().map(|f| f.name.clone()).collect(),
        lambda,
        rule_feature: rule.feature_index,
        learned_threshold: rule.threshold,
        scale: bundle.dataset_meta.display_scale,
        seed: bundle.seed,
        hash: bundle.dataset_meta.config_hash.clone(),
    })
}

fn inputs_from_training(run: &Resolved) -> Result<SweepInputs> {
    let data = load_dataset(&run.dataset).map_err(data_error)?;
    let held = run_heldout(&data, run.seed, &run.study, &run.hash).map_err(eval_error)?;
    Ok(SweepInputs {
        names: data.feature_names(),
        lambda: held.summary.lambda,
        rule_feature: held.summary.rule.feature_index,
        learned_threshold: held.summary.rule.threshold,
        scale: display_scale(data.task),
        seed: run.seed,
        hash: run.hash.clone(),
        x: held.train_x,
        yhat: held.train_yhat,
    })
}

fn pick_feature(spec: Option<&str>, names: &[String], default: usize) -> Result<usize> {
    let Some(spec) = spec else { return Ok(default) };
    if let Some(i) = names.iter().position(|n| n == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(user(anyhow!("unknown feature `{spec}` (expected one of {names:?} or an index)"))),
    }
}

#[derive(Serialize)]
struct SweepArtifact<'a> {
    version: String,
    seed: u64,
    config_hash: &'a str,
    feature: &'a str,
    grid: &'a str,
    argmin_distance: Option<f64>,
    sparse_points: Vec<usize>,
    #[serde(flatten)]
    result: &'a SweepResult,
}

const SWEEP_ARTIFACTS: [&str; 3] = ["sweep.csv", "sweep_factors.csv", "sweep.json"];

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let (inputs, out, grid_spec) = match &args.bundle {
        Some(path) => {
            let bundle = ModelBundle::load(path).map_err(bundle_error)?;
            let cfg = match &args.train.config {
                Some(p) => crate::config::RunConfig::from_file(p).map_err(user)?,
                None => Default::default(),
            };
            let out = args
                .train
                .out
                .clone()
                .or(cfg.out)
                .ok_or_else(|| user(anyhow!("--out is required (flag or run config)")))?;
            let grid = args.grid.clone().or(cfg.grid).unwrap_or_else(|| crate::config::DEFAULT_GRID.into());
            (inputs_from_bundle(&bundle)?, out, grid)
        }
        None => {
            let run = resolve(&args.train).map_err(config_error)?;
            let grid = args.grid.clone().unwrap_or_else(|| run.grid.clone());
            (inputs_from_training(&run)?, run.out.clone(), grid)
        }
    };
    let grid = parse_grid(&grid_spec).map_err(|e| user(anyhow!(e)))?;
    let feature = pick_feature(args.feature.as_deref(), &inputs.names, inputs.rule_feature)?;
    prepare_out(&out, &SWEEP_ARTIFACTS, args.train.force)?;
    let learned = (feature == inputs.rule_feature).then_some(inputs.learned_threshold);
    let result = threshold_sweep(
        inputs.x.view(),
        inputs.yhat.view(),
        feature,
        &grid,
        inputs.lambda,
        learned,
        inputs.scale,
    )
    .map_err(eval_error)?;
    let meta = ArtifactMeta {
        version: version(),
        seed: inputs.seed,
        config_hash: inputs.hash.clone(),
    };
    let name = &inputs.names[feature];
    write(&out, "sweep.csv", &sweep_csv(&meta, &result, name))?;
    write(&out, "sweep_factors.csv", &sweep_factors_csv(&meta, &result, &inputs.names))?;
    write(
        &out,
        "sweep.json",
        &json(&SweepArtifact {
            version: version(),
            seed: inputs.seed,
            config_hash: &inputs.hash,
            feature: name,
            grid: &grid_spec,
            argmin_distance: result.argmin_distance(),
            sparse_points: result.sparse_points(),
            result: &result,
        }),
    )?;

    println!("sweep over {name}: {} grid points, lambda {}", result.points.len(), result.lambda);
    if let Some(i) = result.argmin {
        let p = &result.points[i];
        println!("  combined minimum at percentile {} (threshold {})", p.percentile, p.threshold);
    }
    if let (Some(t), Some(q)) = (result.learned_threshold, result.learned_percentile) {
        println!("  learned threshold {t} sits at percentile {q:.1}");
    }
    if let Some(d) = result.argmin_distance() {
        println!("  distance {d:.1} percentile points");
    }
    println!("  grid points with exact-zero deltas: {}", result.sparse_points().len());
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(user(anyhow!("value `{v}` is not a finite number"))),
            }
        })
        .collect()
}

fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (name, value) = item
            .rsplit_once('=')
            .ok_or_else(|| user(anyhow!("override `{item}` must look like NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| user(anyhow!("override `{item}` has a non-numeric value")))?;
        out.insert(name.trim().to_string(), value);
    }
    Ok(out)
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let bundle = ModelBundle::load(&args.bundle).map_err(bundle_error)?;
    let xai: XaiType = args.xai.parse().map_err(|e: String| user(anyhow!(e)))?;
    let values = parse_values(&args.values)?;
    let overrides = parse_overrides(&args.overrides)?;
    let table = bundle.explain(xai, &values, &overrides).map_err(bundle_error)?;
    if matches!(args.format, Format::Text | Format::Both) {
        print!("{}", table.to_text());
    }
    if args.format == Format::Both {
        println!();
    }
    if matches!(args.format, Format::Json | Format::Both) {
        print!("{}", json(&table));
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let bundle = ModelBundle::load(&args.bundle).map_err(bundle_error)?;
    let addr = format!("{}:{}", args.host, args.port);
    let rt = tokio::runtime::Runtime::new().map_err(env)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| env(anyhow!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(env)?;
        eprintln!("serving {} on http://{local}", bundle.dataset_meta.name);
        factorlens_service::serve(listener, factorlens_service::AppState::new(bundle))
            .await
            .map_err(env)
    })
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> anyhow::Result<ndarray::Array2<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    ndarray::Array2::from_shape_vec((rows.len(), p), flat).map_err(|e| anyhow!("ragged instance rows: {e}"))
}
