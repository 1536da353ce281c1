//! Incremental explainer: shared base factors plus sparse outlier deltas.
//!
//! Training minimises
//!
//! ```text
//! sum_k (y~_k - y^_k)^2 + lambda * (|d_0| + sum_r |d_r|)
//! ```
//!
//! where typical rows use the base model and outlier rows use base + delta.
//! The optimizer runs in rescaled coordinates (base columns standardized,
//! delta columns divided by their spread, target standardized) with the L1
//! weights rescaled to match, so the minimiser maps back exactly to the raw
//! objective above.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::linear::{fit_global, LinearFactorModel, MIN_FIT_ROWS};
use super::optim::{minimize, ProxOptions, SmoothLoss};
use super::partition::{fit_subglobal, PartitionRule, Subspace};
use super::{check_instance, ExplainError, Result};

/// Fractions of `lambda_max` scanned by [`select_lambda`].
pub const DEFAULT_LAMBDA_FRACTIONS: [f64; 12] = [1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.3];

/// Deltas smaller than this in magnitude are snapped to exactly zero.
pub const DELTA_SNAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalModel {
    pub rule: PartitionRule,
    pub base: LinearFactorModel,
    /// Intercept delta plus one delta per factor, applied to outlier rows.
    pub delta: LinearFactorModel,
    pub lambda: f64,
}

impl IncrementalModel {
    /// Factors in effect for outlier instances (base + delta).
    pub fn outlier_effective(&self) -> LinearFactorModel {
        self.base.plus(&self.delta)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.rule.subspace_of(x) {
            Subspace::Typical => self.base.eval(x),
            Subspace::Outlier => self.outlier_effective().eval(x),
        }
    }

    pub fn estimate(&self, x: &[f64]) -> Result<f64> {
        check_instance(x, self.base.n_features())?;
        Ok(self.eval(x))
    }

    /// Number of deltas (intercept included) that are exactly zero.
    pub fn zero_deltas(&self) -> usize {
        usize::from(self.delta.intercept == 0.0)
            + self.delta.factors.iter().filter(|d| **d == 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalFit {
    pub model: IncrementalModel,
    pub iterations: usize,
    pub converged: bool,
    /// Squared-error part of the objective at the returned parameters.
    pub sse: f64,
    /// Full objective (squared error + L1 term) at the returned parameters.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalOptions {
    pub prox: ProxOptions,
    pub snap: f64,
}

impl Default for IncrementalOptions {
    fn default() -> Self {
        IncrementalOptions {
            prox: ProxOptions::default(),
            snap: DELTA_SNAP,
        }
    }
}

/// Smooth part of the objective in raw parametrization, with its gradient
/// over `[base (p+1); delta (p+1)]`, intercepts first.
pub fn incremental_objective(
    x: ArrayView2<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    rule: &PartitionRule,
    params: &[f64],
) -> (f64, Vec<f64>) {
    let loss = RawLoss { x, predicted, rule };
    let mut grad = vec![0.0; params.len()];
    let value = loss.value_and_gradient(params, &mut grad);
    (value, grad)
}

struct RawLoss<'a> {
    x: ArrayView2<'a, f64>,
    predicted: ArrayView1<'a, f64>,
    rule: &'a PartitionRule,
}

impl RawLoss<'_> {
    fn residual(&self, k: usize, theta: &[f64]) -> (f64, bool) {
        let p = self.x.ncols();
        let row = self.x.row(k);
        let outlier = self.rule.is_outlier(row.as_slice().expect("standard layout"));
        let mut fit = theta[0];
        if outlier {
            fit += theta[p + 1];
        }
        for j in 0..p {
            let mut w = theta[1 + j];
            if outlier {
                w += theta[p + 2 + j];
            }
            fit += w * row[j];
        }
        (fit - self.predicted[k], outlier)
    }
}

impl SmoothLoss for RawLoss<'_> {
    fn dim(&self) -> usize {
        2 * (self.x.ncols() + 1)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        (0..self.x.nrows()).map(|k| self.residual(k, theta).0.powi(2)).sum()
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.x.ncols();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for k in 0..self.x.nrows() {
            let (r, outlier) = self.residual(k, theta);
            total += r * r;
            let row = self.x.row(k);
            grad[0] += 2.0 * r;
            for j in 0..p {
                grad[1 + j] += 2.0 * r * row[j];
            }
            if outlier {
                grad[p + 1] += 2.0 * r;
                for j in 0..p {
                    grad[p + 2 + j] += 2.0 * r * row[j];
                }
            }
        }
        total
    }
}

/// Quadratic loss `theta' G theta - 2 c' theta + tt` from sufficient statistics.
struct GramLoss {
    dim: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    tt: f64,
}

impl SmoothLoss for GramLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let gi: f64 = (0..d).map(|j| self.gram[i * d + j] * theta[j]).sum();
            quad += theta[i] * (gi - 2.0 * self.cross[i]);
        }
        quad + self.tt
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let gi: f64 = (0..d).map(|j| self.gram[i * d + j] * theta[j]).sum();
            grad[i] = 2.0 * (gi - self.cross[i]);
            quad += theta[i] * (gi - 2.0 * self.cross[i]);
        }
        quad + self.tt
    }
}

/// Affine map between raw parameters and optimizer coordinates.
struct Scaling {
    mean: Vec<f64>,
    sd: Vec<f64>,
    tmean: f64,
    tsd: f64,
}

impl Scaling {
    fn fit(x: ArrayView2<'_, f64>, predicted: ArrayView1<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let p = x.ncols();
        let mut mean = vec![0.0; p];
        let mut sd = vec![1.0; p];
        for j in 0..p {
            let col = x.column(j);
            mean[j] = col.sum() / n;
            let s = (col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 0.0 {
                sd[j] = s;
            }
        }
        let tmean = predicted.sum() / n;
        let s = (predicted.iter().map(|v| (v - tmean).powi(2)).sum::<f64>() / n).sqrt();
        Scaling {
            mean,
            sd,
            tmean,
            tsd: if s > 0.0 { s } else { 1.0 },
        }
    }

    /// Design row in optimizer coordinates.
    fn design(&self, row: &[f64], outlier: bool, out: &mut [f64]) {
        let p = row.len();
        out[0] = 1.0;
        for j in 0..p {
            out[1 + j] = (row[j] - self.mean[j]) / self.sd[j];
        }
        let m = if outlier { 1.0 } else { 0.0 };
        out[p + 1] = m;
        for j in 0..p {
            out[p + 2 + j] = m * row[j] / self.sd[j];
        }
    }

    fn to_raw(&self, theta: &[f64]) -> (LinearFactorModel, LinearFactorModel) {
        let p = self.mean.len();
        let s = self.tsd;
        let base_factors: Vec<f64> = (0..p).map(|j| s * theta[1 + j] / self.sd[j]).collect();
        let mut base_intercept = self.tmean + s * theta[0];
        for j in 0..p {
            base_intercept -= base_factors[j] * self.mean[j];
        }
        let delta_factors: Vec<f64> = (0..p).map(|j| s * theta[p + 2 + j] / self.sd[j]).collect();
        (
            LinearFactorModel::new(base_intercept, base_factors),
            LinearFactorModel::new(s * theta[p + 1], delta_factors),
        )
    }

    fn penalty_weights(&self, lambda: f64) -> Vec<f64> {
        let p = self.mean.len();
        let mut w = vec![0.0; 2 * (p + 1)];
        w[p + 1] = lambda / self.tsd;
        for j in 0..p {
            w[p + 2 + j] = lambda / (self.tsd * self.sd[j]);
        }
        w
    }
}

/// Fit an Incremental explainer. With no rule, the Subglobal split search
/// picks one (candidates scored at lambda = 0).
pub fn fit_incremental(
    x: ArrayView2<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    lambda: f64,
    rule: Option<&PartitionRule>,
    opts: &IncrementalOptions,
) -> Result<IncrementalFit> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ExplainError::InvalidLambda(lambda));
    }
    let rule = match rule {
        Some(r) => r.clone(),
        None => fit_subglobal(x, predicted)?.model.rule,
    };
    let n = x.nrows();
    let p = x.ncols();
    let outliers = (0..n)
        .filter(|&k| rule.is_outlier(x.row(k).as_slice().expect("standard layout")))
        .count();
    let smallest = outliers.min(n - outliers);
    if smallest < MIN_FIT_ROWS {
        return Err(ExplainError::TooFewRows {
            needed: MIN_FIT_ROWS,
            have: smallest,
        });
    }

    let scaling = Scaling::fit(x, predicted);
    let d = 2 * (p + 1);
    let mut gram = vec![0.0; d * d];
    let mut cross = vec![0.0; d];
    let mut tt = 0.0;
    let mut a = vec![0.0; d];
    for k in 0..n {
        let row = x.row(k);
        let row = row.as_slice().expect("standard layout");
        scaling.design(row, rule.is_outlier(row), &mut a);
        let t = (predicted[k] - scaling.tmean) / scaling.tsd;
        tt += t * t;
        for i in 0..d {
            cross[i] += a[i] * t;
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                gram[i * d + j] += a[i] * a[j];
            }
        }
    }
    let trace: f64 = (0..d).map(|i| gram[i * d + i]).sum();
    let loss = GramLoss { dim: d, gram, cross, tt };
    let prox = ProxOptions {
        initial_step: 1.0 / (2.0 * trace.max(f64::MIN_POSITIVE)),
        ..opts.prox.clone()
    };
    let result = minimize(&loss, &scaling.penalty_weights(lambda), &vec![0.0; d], &prox)?;

    let (base, mut delta) = scaling.to_raw(&result.theta);
    if delta.intercept.abs() < opts.snap {
        delta.intercept = 0.0;
    }
    for w in &mut delta.factors {
        if w.abs() < opts.snap {
            *w = 0.0;
        }
    }
    let model = IncrementalModel {
        rule,
        base,
        delta,
        lambda,
    };
    let sse: f64 = (0..n)
        .map(|k| (model.eval(x.row(k).as_slice().expect("standard layout")) - predicted[k]).powi(2))
        .sum();
    let final_loss = sse + lambda * model.delta.l1_norm();
    Ok(IncrementalFit {
        model,
        iterations: result.iterations,
        converged: result.converged,
        sse,
        final_loss,
    })
}

/// Smallest lambda at which every delta is zero for the given rule.
///
/// With all deltas at zero the best base is the global OLS fit; the
/// subgradient condition then requires lambda to dominate every delta
/// gradient component.
pub fn lambda_max(
    x: ArrayView2<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    rule: &PartitionRule,
) -> Result<f64> {
    let global = fit_global(x, predicted)?.model;
    let p = x.ncols();
    let mut params = vec![global.intercept];
    params.extend(&global.factors);
    params.extend(std::iter::repeat_n(0.0, p + 1));
    let (_, grad) = incremental_objective(x, predicted, rule, &params);
    Ok(grad[p + 1..].iter().fold(0.0_f64, |m, g| m.max(g.abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub lambda_max: f64,
    /// `(lambda, training MAE)` for lambda = 0 and every scanned fraction.
    pub scanned: Vec<(f64, f64)>,
    /// Allowed MAE inflation over lambda = 0 (0.05 for 5%).
    pub tolerance: f64,
}

/// Largest `fraction * lambda_max` whose training MAE stays within
/// `tolerance` of the unregularized fit.
pub fn select_lambda(
    x: ArrayView2<'_, f64>,
    predicted: ArrayView1<'_, f64>,
    rule: &PartitionRule,
    fractions: &[f64],
    tolerance: f64,
    opts: &IncrementalOptions,
) -> Result<LambdaSelection> {
    let lmax = lambda_max(x, predicted, rule)?;
    let mae = |lambda: f64| -> Result<f64> {
        let fit = fit_incremental(x, predicted, lambda, Some(rule), opts)?;
        let n = x.nrows();
        Ok((0..n)
            .map(|k| (fit.model.eval(x.row(k).as_slice().expect("standard layout")) - predicted[k]).abs())
            .sum::<f64>()
            / n as f64)
    };
    let reference = mae(0.0)?;
    let mut scanned = vec![(0.0, reference)];
    let mut chosen = 0.0;
    for &f in fractions {
        let lambda = f * lmax;
        let m = mae(lambda)?;
        scanned.push((lambda, m));
        if m <= (1.0 + tolerance) * reference && lambda > chosen {
            chosen = lambda;
        }
    }
    Ok(LambdaSelection {
        lambda: chosen,
        lambda_max: lmax,
        scanned,
        tolerance,
    })
}
