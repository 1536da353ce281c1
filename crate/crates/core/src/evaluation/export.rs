//! CSV artifacts. Numbers use Rust's shortest round-trip formatting so a
//! parsed cell reproduces the in-memory value exactly; missing values are
//! empty cells.

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{ModelingStudy, SubspaceLabel, SweepResult, SweepStatus};
use crate::bundle::ModelBundle;
use crate::explain::{LinearFactorModel, XaiType};

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance columns prepended to sweep and surface rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactMeta {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactMeta {
    const HEADER: [&'static str; 3] = ["version", "seed", "config_hash"];

    fn cells(&self) -> [String; 3] {
        [self.version.clone(), self.seed.to_string(), self.config_hash.clone()]
    }
}

fn record<const N: usize>(meta: &ArtifactMeta, rest: [String; N]) -> Vec<String> {
    meta.cells().into_iter().chain(rest).collect()
}

fn header(rest: &[&str]) -> Vec<String> {
    ArtifactMeta::HEADER.iter().chain(rest).map(ToString::to_string).collect()
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// One row per report cell with per-fold values and counts.
pub fn study_csv(study: &ModelingStudy) -> String {
    let k = study.folds.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["dataset", "seed", "config_hash", "version", "section", "partition", "model", "subspace", "metric", "mean", "std"]
        .iter()
        .map(ToString::to_string)
        .collect();
    header.extend((1..=k).map(|i| format!("fold_{i}")));
    header.extend((1..=k).map(|i| format!("count_{i}")));
    header.push("flags".into());
    w.write_record(&header).expect("csv write");
    for c in &study.cells {
        let mut rec = vec![
            study.dataset.clone(),
            study.seed.to_string(),
            study.config_hash.clone(),
            study.version.clone(),
            serde_plain(&c.section),
            serde_plain(&c.partition),
            c.model_label().to_string(),
            c.subspace.as_str().to_string(),
            serde_plain(&c.metric),
            num(c.mean),
            num(c.std),
        ];
        rec.extend(c.folds.iter().map(|v| num(*v)));
        rec.extend(c.counts.iter().map(ToString::to_string));
        rec.push(c.flags.join(";"));
        w.write_record(&rec).expect("csv write");
    }
    finish(w)
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v).expect("serializes") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Long-format sweep curves: one row per (grid point, series).
pub fn sweep_csv(meta: &ArtifactMeta, sweep: &SweepResult, feature: &str) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&["feature", "percentile", "threshold", "status", "series", "value", "normalized", "n_typical", "n_outlier", "is_min"]))
        .expect("csv write");
    for (i, p) in sweep.points.iter().enumerate() {
        for (s, (name, norm)) in sweep.normalized.iter().enumerate() {
            let values = if s < 3 { p.subglobal } else { p.incremental };
            let label = SubspaceLabel::ALL[s % 3];
            let status = match p.status {
                SweepStatus::Ok => "ok",
                SweepStatus::Skipped => "skipped",
            };
            w.write_record(record(meta, [
                feature.to_string(),
                p.percentile.to_string(),
                p.threshold.to_string(),
                status.to_string(),
                name.clone(),
                num(values.and_then(|v| v.get(label))),
                num(norm[i]),
                p.n_typical.to_string(),
                p.n_outlier.to_string(),
                (sweep.argmin == Some(i)).to_string(),
            ]))
            .expect("csv write");
        }
    }
    finish(w)
}

/// Long-format factor trajectories: subspace factors, base and deltas per grid point.
pub fn sweep_factors_csv(meta: &ArtifactMeta, sweep: &SweepResult, feature_names: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&["percentile", "threshold", "status", "model", "part", "term", "value"]))
        .expect("csv write");
    for p in &sweep.points {
        let status = match p.status {
            SweepStatus::Ok => "ok",
            SweepStatus::Skipped => "skipped",
        };
        let parts: [(&str, &str, &Option<LinearFactorModel>); 4] = [
            ("subglobal", "typical", &p.subglobal_typical),
            ("subglobal", "outlier", &p.subglobal_outlier),
            ("incremental", "base", &p.incremental_base),
            ("incremental", "delta", &p.incremental_delta),
        ];
        for (model, part, m) in parts {
            let mut terms = vec![("adjustment".to_string(), m.as_ref().map(|m| m.intercept))];
            for (j, name) in feature_names.iter().enumerate() {
                terms.push((name.clone(), m.as_ref().map(|m| m.factors[j])));
            }
            for (term, v) in terms {
                w.write_record(record(meta, [
                    p.percentile.to_string(),
                    p.threshold.to_string(),
                    status.to_string(),
                    model.to_string(),
                    part.to_string(),
                    term,
                    num(v),
                ]))
                .expect("csv write");
            }
        }
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfacePoint {
    /// `"ai"` for the forest, otherwise the explainer type.
    pub model: String,
    pub a: f64,
    pub b: f64,
    pub estimate: f64,
}

/// Estimates over a `steps x steps` grid of features `fa` and `fb` spanning
/// their observed ranges, with the other features held at their medians.
pub fn surface_grid(bundle: &ModelBundle, fa: usize, fb: usize, steps: usize) -> Vec<SurfacePoint> {
    let feats = &bundle.dataset_meta.features;
    let base: Vec<f64> = feats.iter().map(|f| f.median).collect();
    let axis = |j: usize| -> Vec<f64> {
        let (lo, hi) = (feats[j].min, feats[j].max);
        if steps < 2 {
            return vec![lo];
        }
        (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
    };
    let (av, bv) = (axis(fa), axis(fb));
    let mut out = Vec::new();
    let models: Vec<Option<XaiType>> = std::iter::once(None)
        .chain(
            [XaiType::Global, XaiType::Subglobal, XaiType::Incremental]
                .into_iter()
                .filter(|t| bundle.explainer(*t).is_some())
                .map(Some),
        )
        .collect();
    for model in models {
        for &a in &av {
            for &b in &bv {
                let mut x = base.clone();
                x[fa] = a;
                x[fb] = b;
                let estimate = match model {
                    None => bundle.forest.predict(&x).expect("finite grid point"),
                    Some(t) => bundle.resolve(t, &x).expect("linear explainer").effective.eval(&x),
                };
                out.push(SurfacePoint {
                    model: model.map_or("ai", XaiType::as_str).to_string(),
                    a,
                    b,
                    estimate,
                });
            }
        }
    }
    out
}

pub fn surface_csv(meta: &ArtifactMeta, points: &[SurfacePoint], name_a: &str, name_b: &str) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(&["model", name_a, name_b, "estimate"])).expect("csv write");
    for p in points {
        w.write_record(record(meta, [p.model.clone(), p.a.to_string(), p.b.to_string(), p.estimate.to_string()]))
            .expect("csv write");
    }
    finish(w)
}
