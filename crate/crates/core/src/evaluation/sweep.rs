//! Threshold sweep: refit Subglobal and Incremental at fixed thresholds along
//! one feature's percentile grid and track per-subspace unfaithfulness.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Result, SubspaceTally, SubspaceValues};
use crate::explain::{
    fit_incremental, fit_subglobal_with_rule, min_subspace_rows, percentile, IncrementalOptions,
    LinearFactorModel, PartitionRule, TypicalSide,
};

/// Parse `start:end:step` percentiles, e.g. `10:90:5`.
pub fn parse_grid(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid `{spec}` must look like start:end:step"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("`{s}` in grid `{spec}` is not a number"));
    let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(0.0..=100.0).contains(&start) || !(0.0..=100.0).contains(&end) || start > end {
        return Err(format!("grid `{spec}` must satisfy 0 <= start <= end <= 100"));
    }
    if !(step > 0.0) {
        return Err(format!("grid step must be positive, got {step}"));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Ok,
    /// A subspace fell below the minimum size at this threshold.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub percentile: f64,
    pub threshold: f64,
    pub status: SweepStatus,
    pub typical_side: TypicalSide,
    pub n_typical: usize,
    pub n_outlier: usize,
    pub subglobal: Option<SubspaceValues>,
    pub incremental: Option<SubspaceValues>,
    pub subglobal_typical: Option<LinearFactorModel>,
    pub subglobal_outlier: Option<LinearFactorModel>,
    pub incremental_base: Option<LinearFactorModel>,
    pub incremental_delta: Option<LinearFactorModel>,
}

impl SweepPoint {
    /// Some Incremental delta is exactly zero while the Subglobal subspace
    /// factors differ.
    pub fn has_sparse_region(&self) -> bool {
        match (&self.incremental_delta, &self.subglobal_typical, &self.subglobal_outlier) {
            (Some(d), Some(t), Some(o)) => {
                let any_zero = d.intercept == 0.0 || d.factors.contains(&0.0);
                any_zero && t != o
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub feature_index: usize,
    pub lambda: f64,
    pub scale: f64,
    pub points: Vec<SweepPoint>,
    /// Index of the point with the smallest Subglobal combined MAE.
    pub argmin: Option<usize>,
    pub learned_threshold: Option<f64>,
    /// Share of rows strictly below the learned threshold, in percent.
    pub learned_percentile: Option<f64>,
    /// Min-max normalized curves: `(series, value per point)`.
    pub normalized: Vec<(String, Vec<Option<f64>>)>,
}

impl SweepResult {
    /// Percentile distance between the sweep minimum and the learned threshold.
    pub fn argmin_distance(&self) -> Option<f64> {
        Some((self.points[self.argmin?].percentile - self.learned_percentile?).abs())
    }

    pub fn sparse_points(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.points[i].has_sparse_region()).collect()
    }
}

fn tally(x: ArrayView2<'_, f64>, yhat: ArrayView1<'_, f64>, rule: &PartitionRule, f: impl Fn(&[f64]) -> f64) -> SubspaceTally {
    let mut t = SubspaceTally::default();
    for (k, row) in x.rows().into_iter().enumerate() {
        let s = row.as_slice().expect("standard layout");
        t.add(rule.subspace_of(s), (f(s) - yhat[k]).abs());
    }
    t
}

fn min_max(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| v.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }))
        .collect()
}

/// Fit and score Subglobal and Incremental (fixed `lambda`) on `(x, yhat)`
/// at each percentile of `feature_index`. The majority side of each
/// threshold is the typical subspace.
pub fn threshold_sweep(
    x: ArrayView2<'_, f64>,
    yhat: ArrayView1<'_, f64>,
    feature_index: usize,
    grid: &[f64],
    lambda: f64,
    learned_threshold: Option<f64>,
    scale: f64,
) -> Result<SweepResult> {
    let values: Vec<f64> = x.column(feature_index).to_vec();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    let min_rows = min_subspace_rows(n);
    let opts = IncrementalOptions::default();

    let mut points = Vec::with_capacity(grid.len());
    for &q in grid {
        let threshold = percentile(&sorted, q);
        let rule = PartitionRule::with_majority(feature_index, threshold, &values);
        let above = values.iter().filter(|&&v| v >= threshold).count();
        let (n_typical, n_outlier) = match rule.typical_side {
            TypicalSide::Below => (n - above, above),
            TypicalSide::AtOrAbove => (above, n - above),
        };
        let mut point = SweepPoint {
            percentile: q,
            threshold,
            status: SweepStatus::Skipped,
            typical_side: rule.typical_side,
            n_typical,
            n_outlier,
            subglobal: None,
            incremental: None,
            subglobal_typical: None,
            subglobal_outlier: None,
            incremental_base: None,
            incremental_delta: None,
        };
        if n_outlier >= min_rows && n_typical >= min_rows {
            let sub = fit_subglobal_with_rule(x, yhat, &rule)?.model;
            let inc = fit_incremental(x, yhat, lambda, Some(&rule), &opts)?.model;
            point.status = SweepStatus::Ok;
            point.subglobal = Some(tally(x, yhat, &rule, |s| sub.eval(s)).means(scale));
            point.incremental = Some(tally(x, yhat, &rule, |s| inc.eval(s)).means(scale));
            point.subglobal_typical = Some(sub.typical);
            point.subglobal_outlier = Some(sub.outlier);
            point.incremental_base = Some(inc.base);
            point.incremental_delta = Some(inc.delta);
        }
        points.push(point);
    }

    let argmin = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.subglobal.and_then(|v| v.combined).map(|c| (i, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);

    let mut normalized = Vec::new();
    for (family, pick) in [("subglobal", 0), ("incremental", 1)] {
        for sub in ["combined", "typical", "outlier"] {
            let series: Vec<Option<f64>> = points
                .iter()
                .map(|p| {
                    let v = if pick == 0 { p.subglobal } else { p.incremental }?;
                    match sub {
                        "combined" => v.combined,
                        "typical" => v.typical,
                        _ => v.outlier,
                    }
                })
                .collect();
            normalized.push((format!("{family}_{sub}"), min_max(&series)));
        }
    }

    let learned_percentile = learned_threshold.map(|t| 100.0 * values.iter().filter(|&&v| v < t).count() as f64 / n as f64);
    Ok(SweepResult {
        feature_index,
        lambda,
        scale,
        points,
        argmin,
        learned_threshold,
        learned_percentile,
        normalized,
    })
}
