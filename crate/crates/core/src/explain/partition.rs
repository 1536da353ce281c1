use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linear::{fit_ols, LinearFactorModel, MIN_FIT_ROWS};
use super::{check_instance, ExplainError, Result};
use crate::linalg::{solve_with_ridge, RIDGE_FALLBACK};

/// Above this many rows the split search scans the 1st..99th percentiles of
/// each feature instead of every midpoint.
pub const PERCENTILE_GRID_ROWS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    Typical,
    Outlier,
}

impl Subspace {
    pub fn as_str(self) -> &'static str {
        match self {
            Subspace::Typical => "typical",
            Subspace::Outlier => "outlier",
        }
    }
}

/// Which side of the threshold holds the majority ("typical") subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypicalSide {
    Below,
    AtOrAbove,
}

/// Single-attribute threshold rule. `x[feature] >= threshold` is the
/// at-or-above side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRule {
    pub feature_index: usize,
    pub threshold: f64,
    pub typical_side: TypicalSide,
}

impl PartitionRule {
    pub fn new(feature_index: usize, threshold: f64, typical_side: TypicalSide) -> Self {
        PartitionRule {
            feature_index,
            threshold,
            typical_side,
        }
    }

    /// Rule whose typical side is whichever side holds more of `values`
    /// (ties go to the below side).
    pub fn with_majority(feature_index: usize, threshold: f64, values: &[f64]) -> Self {
        let above = values.iter().filter(|&&v| v >= threshold).count();
        let below = values.len() - above;
        let typical_side = if below >= above {
            TypicalSide::Below
        } else {
            TypicalSide::AtOrAbove
        };
        PartitionRule::new(feature_index, threshold, typical_side)
    }

    pub fn subspace_of(&self, x: &[f64]) -> Subspace {
        let at_or_above = x[self.feature_index] >= self.threshold;
        match (self.typical_side, at_or_above) {
            (TypicalSide::Below, false) | (TypicalSide::AtOrAbove, true) => Subspace::Typical,
            _ => Subspace::Outlier,
        }
    }

    pub fn is_outlier(&self, x: &[f64]) -> bool {
        self.subspace_of(x) == Subspace::Outlier
    }
}

/// Per-subspace OLS models behind a partition rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubglobalModel {
    pub rule: PartitionRule,
    pub typical: LinearFactorModel,
    pub outlier: LinearFactorModel,
}

impl SubglobalModel {
    pub fn model_for(&self, x: &[f64]) -> &LinearFactorModel {
        match self.rule.subspace_of(x) {
            Subspace::Typical => &self.typical,
            Subspace::Outlier => &self.outlier,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.model_for(x).eval(x)
    }

    pub fn estimate(&self, x: &[f64]) -> Result<f64> {
        check_instance(x, self.typical.n_features())?;
        Ok(self.eval(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubglobalFit {
    pub model: SubglobalModel,
    /// Combined training SSE of the two subspace fits, in target units squared.
    pub sse: f64,
    pub candidates_evaluated: usize,
    pub ridge_fallback: bool,
}

/// A scored split candidate from the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature_index: usize,
    pub threshold: f64,
    pub sse: f64,
}

/// `max(6, ceil(5% of n))`.
pub fn min_subspace_rows(n: usize) -> usize {
    MIN_FIT_ROWS.max((0.05 * n as f64).ceil() as usize)
}

/// Linear-interpolated percentile of ascending `sorted` values, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Candidate thresholds for one feature column, ascending and distinct.
pub fn candidate_thresholds(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = if values.len() > PERCENTILE_GRID_ROWS {
        (1..=99)
            .map(|q| percentile(&sorted, q as f64))
            .filter(|&t| t > sorted[0])
            .collect()
    } else {
        sorted.dedup();
        sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    };
    out.dedup();
    out
}

/// Running sufficient statistics of one side: Gram of `[1, z]`, `[1, z]' t`.
#[derive(Clone)]
struct SideStats {
    dim: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    n: usize,
}

impl SideStats {
    fn new(dim: usize) -> Self {
        SideStats {
            dim,
            gram: vec![0.0; dim * dim],
            cross: vec![0.0; dim],
            n: 0,
        }
    }

    fn add(&mut self, a: &[f64], t: f64) {
        for i in 0..self.dim {
            self.cross[i] += a[i] * t;
            for j in 0..self.dim {
                self.gram[i * self.dim + j] += a[i] * a[j];
            }
        }
        self.n += 1;
    }

    fn minus(&self, other: &SideStats) -> SideStats {
        SideStats {
            dim: self.dim,
            gram: self.gram.iter().zip(&other.gram).map(|(a, b)| a - b).collect(),
            cross: self.cross.iter().zip(&other.cross).map(|(a, b)| a - b).collect(),
            n: self.n - other.n,
        }
    }

    fn solve(&self) -> Vec<f64> {
        solve_with_ridge(&self.gram, &self.cross, RIDGE_FALLBACK).0
    }
}

/// Subglobal explainer: exhaustive decision-stump search.
///
/// Every feature and candidate threshold is scored by the summed SSE of the
/// two per-side OLS fits against `predicted`; sides smaller than
/// [`min_subspace_rows`] are skipped. The larger side becomes typical.
pub fn fit_subglobal(x: ArrayView2<'_, f64>, predicted: ArrayView1<'_, f64>) -> Result<SubglobalFit> {
    let best = search_split(x, predicted)?;
    let feature_values: Vec<f64> = x.column(best.0.feature_index).to_vec();
    let rule = PartitionRule::with_majority(best.0.feature_index, best.0.threshold, &feature_values);
    let mut fit = fit_subglobal_with_rule(x, predicted, &rule)?;
    fit.candidates_evaluated = best.1;
    Ok(fit)
}

/// Fit per-subspace OLS models for a fixed rule.
pub fn fit_subglobal_with_rule(
    x: ArrayView2<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    rule: &PartitionRule,
) -> Result<SubglobalFit> {
    let (typ, out): (Vec<usize>, Vec<usize>) = (0..x.nrows())
        .partition(|&k| rule.subspace_of(x.row(k).as_slice().expect("standard layout")) == Subspace::Typical);
    let side = |rows: &[usize]| {
        let xs = x.select(Axis(0), rows);
        let ys: Array1<f64> = predicted.select(Axis(0), rows);
        fit_ols(xs.view(), ys.view(), None)
    };
    let typical = side(&typ)?;
    let outlier = side(&out)?;
    let model = SubglobalModel {
        rule: rule.clone(),
        typical: typical.model,
        outlier: outlier.model,
    };
    let sse = (0..x.nrows())
        .map(|k| {
            let r = x.row(k);
            (model.eval(r.as_slice().expect("standard layout")) - predicted[k]).powi(2)
        })
        .sum();
    Ok(SubglobalFit {
        model,
        sse,
        candidates_evaluated: 0,
        ridge_fallback: typical.ridge_fallback || outlier.ridge_fallback,
    })
}

/// Returns the winning candidate and the number of admissible candidates.
fn search_split(x: ArrayView2<'_, f64>, predicted: ArrayView1<'_, f64>) -> Result<(SplitCandidate, usize)> {
    let n = x.nrows();
    let p = x.ncols();
    let min_rows = min_subspace_rows(n);
    if n < 2 * min_rows {
        return Err(ExplainError::NoAdmissibleSplit { min_rows });
    }
    // Work on standardized data; the argmin is invariant to affine rescaling.
    let dim = p + 1;
    let mut design = vec![0.0; n * dim];
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for k in 0..n {
            design[k * dim + j + 1] = (x[[k, j]] - mean) / sd;
        }
    }
    for k in 0..n {
        design[k * dim] = 1.0;
    }
    let tmean = predicted.sum() / n as f64;
    let tsd = (predicted.iter().map(|v| (v - tmean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let tsd = if tsd > 0.0 { tsd } else { 1.0 };
    let target: Vec<f64> = predicted.iter().map(|v| (v - tmean) / tsd).collect();

    let mut total = SideStats::new(dim);
    for k in 0..n {
        total.add(&design[k * dim..(k + 1) * dim], target[k]);
    }

    let sse_of = |rows: &[usize], beta: &[f64]| -> f64 {
        rows.iter()
            .map(|&k| {
                let a = &design[k * dim..(k + 1) * dim];
                let fit: f64 = a.iter().zip(beta).map(|(u, b)| u * b).sum();
                (target[k] - fit).powi(2)
            })
            .sum()
    };

    let mut best: Option<SplitCandidate> = None;
    let mut evaluated = 0usize;
    for f in 0..p {
        let col: Vec<f64> = x.column(f).to_vec();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut below = SideStats::new(dim);
        let mut cursor = 0;
        for threshold in candidate_thresholds(&col) {
            while cursor < n && col[order[cursor]] < threshold {
                let k = order[cursor];
                below.add(&design[k * dim..(k + 1) * dim], target[k]);
                cursor += 1;
            }
            if below.n < min_rows || n - below.n < min_rows {
                continue;
            }
            evaluated += 1;
            let above = total.minus(&below);
            let sse = sse_of(&order[..cursor], &below.solve()) + sse_of(&order[cursor..], &above.solve());
            // sse stays in standardized units until the search ends
            if best.is_none_or(|b| sse < b.sse) {
                best = Some(SplitCandidate {
                    feature_index: f,
                    threshold,
                    sse,
                });
            }
        }
    }
    match best {
        Some(mut b) => {
            b.sse *= tsd * tsd;
            Ok((b, evaluated))
        }
        None => Err(ExplainError::NoAdmissibleSplit { min_rows }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subspace_boundary_convention() {
        let rule = PartitionRule::new(1, 2.5, TypicalSide::Below);
        assert_eq!(rule.subspace_of(&[1.0, 2.49, 7.0, 20.0]), Subspace::Typical);
        assert_eq!(rule.subspace_of(&[1.0, 2.5, 7.0, 20.0]), Subspace::Outlier);
        let flipped = PartitionRule::new(1, 2.5, TypicalSide::AtOrAbove);
        assert_eq!(flipped.subspace_of(&[1.0, 2.5, 7.0, 20.0]), Subspace::Typical);
    }

    #[test]
    fn membership_matches_direct_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rule = PartitionRule::new(2, 0.3, TypicalSide::Below);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direct = if x[2] >= 0.3 { Subspace::Outlier } else { Subspace::Typical };
            assert_eq!(rule.subspace_of(&x), direct);
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
    }

    #[test]
    fn midpoint_candidates() {
        assert_eq!(candidate_thresholds(&[3.0, 1.0, 1.0, 2.0]), vec![1.5, 2.5]);
    }

    #[test]
    fn planted_kink_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 300;
        let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(0.0..5.0));
        let y: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|r| {
                let base = 1.0 + 0.5 * r[0] - 0.2 * r[3];
                if r[1] >= 2.5 { base + 4.0 * (r[1] - 2.5) } else { base }
            })
            .collect();
        let fit = fit_subglobal(x.view(), y.view()).unwrap();
        assert_eq!(fit.model.rule.feature_index, 1);
        let mut col: Vec<f64> = x.column(1).to_vec();
        col.sort_by(f64::total_cmp);
        let grid = candidate_thresholds(&col);
        let pos = grid.iter().position(|&t| t == fit.model.rule.threshold).unwrap();
        let nearest = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 2.5).abs().total_cmp(&(b.1 - 2.5).abs()))
            .unwrap()
            .0;
        assert!((pos as i64 - nearest as i64).abs() <= 1);
        assert!(fit.sse < 1e-12);
    }

    #[test]
    fn degenerate_features_have_no_split() {
        let x = Array2::from_elem((40, 3), 1.0);
        let y = Array1::from_shape_fn(40, |i| i as f64);
        assert!(matches!(
            fit_subglobal(x.view(), y.view()),
            Err(ExplainError::NoAdmissibleSplit { .. })
        ));
    }

    #[test]
    fn larger_side_is_typical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..10.0));
        let y: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|r| if r[0] >= 8.0 { 20.0 - 3.0 * r[1] } else { r[1] })
            .collect();
        let fit = fit_subglobal(x.view(), y.view()).unwrap();
        let rule = &fit.model.rule;
        let typical = x
            .rows()
            .into_iter()
            .filter(|r| rule.subspace_of(r.as_slice().unwrap()) == Subspace::Typical)
            .count();
        assert!(2 * typical >= n);
    }
}
