//! Explainer families trained on ground truth and used as predictors.
//!
//! Regression targets reuse the OLS / stump / L1-delta fits. Binary targets
//! pass the linear output through a logistic link and train on binary
//! cross-entropy with the same proximal solver.

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::Result;
use crate::data::Task;
use crate::explain::optim::{minimize, ProxOptions, SmoothLoss};
use crate::explain::{
    fit_incremental, fit_ols, fit_subglobal_with_rule, lambda_max, IncrementalModel,
    IncrementalOptions, LinearFactorModel, PartitionRule, SubglobalModel, Subspace, XaiType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlassboxFamily {
    Global,
    Subglobal,
    Incremental,
}

impl GlassboxFamily {
    pub const ALL: [GlassboxFamily; 3] = [GlassboxFamily::Global, GlassboxFamily::Subglobal, GlassboxFamily::Incremental];

    pub fn xai_type(self) -> XaiType {
        match self {
            GlassboxFamily::Global => XaiType::Global,
            GlassboxFamily::Subglobal => XaiType::Subglobal,
            GlassboxFamily::Incremental => XaiType::Incremental,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GlassboxKind {
    Linear(LinearFactorModel),
    Subglobal(SubglobalModel),
    Incremental(IncrementalModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlassboxModel {
    pub family: GlassboxFamily,
    pub kind: GlassboxKind,
    /// Output passes through the logistic function.
    pub logistic: bool,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl GlassboxModel {
    /// Linear output, before any link.
    pub fn linear_output(&self, x: &[f64]) -> f64 {
        match &self.kind {
            GlassboxKind::Linear(m) => m.eval(x),
            GlassboxKind::Subglobal(m) => m.eval(x),
            GlassboxKind::Incremental(m) => m.eval(x),
        }
    }

    /// Prediction in target units (a probability for logistic models).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.linear_output(x);
        if self.logistic {
            sigmoid(z)
        } else {
            z
        }
    }
}

/// Logistic fit with optional base + delta structure.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub base: LinearFactorModel,
    /// Outlier deltas; present when a rule was given.
    pub delta: Option<LinearFactorModel>,
    pub iterations: usize,
    pub converged: bool,
}

struct LogisticLoss {
    design: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl LogisticLoss {
    fn eta(&self, k: usize, theta: &[f64]) -> f64 {
        let row = &self.design[k * self.dim..(k + 1) * self.dim];
        row.iter().zip(theta).map(|(a, t)| a * t).sum()
    }
}

impl SmoothLoss for LogisticLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &[f64]) -> f64 {
        (0..self.y.len())
            .map(|k| {
                let z = self.eta(k, theta);
                softplus(z) - self.y[k] * z
            })
            .sum()
    }

    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for k in 0..self.y.len() {
            let z = self.eta(k, theta);
            total += softplus(z) - self.y[k] * z;
            let r = sigmoid(z) - self.y[k];
            let row = &self.design[k * self.dim..(k + 1) * self.dim];
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        total
    }
}

struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for c in x.columns() {
            let m = c.sum() / n;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            sd.push(if s > 0.0 { s } else { 1.0 });
        }
        Standardizer { mean, sd }
    }
}

/// Binary cross-entropy fit of a (base [+ delta]) linear model under a
/// logistic link. Deltas carry the L1 penalty `lambda * sum |delta|` in raw
/// units; the base is unpenalized.
pub fn fit_logistic(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    rule: Option<&PartitionRule>,
    lambda: f64,
) -> Result<LogisticFit> {
    let (n, p) = x.dim();
    let st = Standardizer::fit(x);
    let dim = if rule.is_some() { 2 * (p + 1) } else { p + 1 };
    let mut design = vec![0.0; n * dim];
    for k in 0..n {
        let row = x.row(k);
        let a = &mut design[k * dim..(k + 1) * dim];
        a[0] = 1.0;
        for j in 0..p {
            a[1 + j] = (row[j] - st.mean[j]) / st.sd[j];
        }
        if let Some(rule) = rule {
            if rule.is_outlier(row.as_slice().expect("standard layout")) {
                a[p + 1] = 1.0;
                for j in 0..p {
                    a[p + 2 + j] = row[j] / st.sd[j];
                }
            }
        }
    }
    let mut weights = vec![0.0; dim];
    if rule.is_some() {
        weights[p + 1] = lambda;
        for j in 0..p {
            weights[p + 2 + j] = lambda / st.sd[j];
        }
    }
    let trace: f64 = design.iter().map(|a| a * a).sum();
    let loss = LogisticLoss {
        design,
        y: y.to_vec(),
        dim,
    };
    let opts = ProxOptions {
        initial_step: 4.0 / trace.max(f64::MIN_POSITIVE),
        ..ProxOptions::default()
    };
    let res = minimize(&loss, &weights, &vec![0.0; dim], &opts)?;
    let t = &res.theta;
    let factors: Vec<f64> = (0..p).map(|j| t[1 + j] / st.sd[j]).collect();
    let intercept = t[0] - (0..p).map(|j| factors[j] * st.mean[j]).sum::<f64>();
    let delta = rule.map(|_| LinearFactorModel::new(t[p + 1], (0..p).map(|j| t[p + 2 + j] / st.sd[j]).collect()));
    Ok(LogisticFit {
        base: LinearFactorModel::new(intercept, factors),
        delta,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Smallest lambda that zeroes every logistic delta for `rule`.
fn logistic_lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, rule: &PartitionRule) -> Result<f64> {
    let global = fit_logistic(x, y, None, 0.0)?.base;
    let mut g = vec![0.0; x.ncols() + 1];
    for (k, row) in x.rows().into_iter().enumerate() {
        let s = row.as_slice().expect("standard layout");
        if rule.is_outlier(s) {
            let r = sigmoid(global.eval(s)) - y[k];
            g[0] += r;
            for (j, v) in s.iter().enumerate() {
                g[1 + j] += r * v;
            }
        }
    }
    Ok(g.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Train one explainer family on labels `y`.
///
/// The Incremental family uses `lambda_fraction * lambda_max` of its own
/// loss when a fraction is given, otherwise `fallback_lambda`.
pub fn fit_glassbox(
    family: GlassboxFamily,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    task: Task,
    rule: &PartitionRule,
    lambda_fraction: Option<f64>,
    fallback_lambda: f64,
) -> Result<GlassboxModel> {
    let logistic = task == Task::Classification;
    let (kind, converged) = match (family, logistic) {
        (GlassboxFamily::Global, false) => (GlassboxKind::Linear(fit_ols(x, y, None)?.model), true),
        (GlassboxFamily::Subglobal, false) => (GlassboxKind::Subglobal(fit_subglobal_with_rule(x, y, rule)?.model), true),
        (GlassboxFamily::Incremental, false) => {
            let lambda = match lambda_fraction {
                Some(f) => f * lambda_max(x, y, rule)?,
                None => fallback_lambda,
            };
            let fit = fit_incremental(x, y, lambda, Some(rule), &IncrementalOptions::default())?;
            (GlassboxKind::Incremental(fit.model), fit.converged)
        }
        (GlassboxFamily::Global, true) => {
            let fit = fit_logistic(x, y, None, 0.0)?;
            (GlassboxKind::Linear(fit.base), fit.converged)
        }
        (GlassboxFamily::Subglobal, true) => {
            let (typ, out): (Vec<usize>, Vec<usize>) = (0..x.nrows())
                .partition(|&k| rule.subspace_of(x.row(k).as_slice().expect("standard layout")) == Subspace::Typical);
            let side = |rows: &[usize]| fit_logistic(x.select(Axis(0), rows).view(), y.select(Axis(0), rows).view(), None, 0.0);
            let t = side(&typ)?;
            let o = side(&out)?;
            let model = SubglobalModel {
                rule: rule.clone(),
                typical: t.base,
                outlier: o.base,
            };
            (GlassboxKind::Subglobal(model), t.converged && o.converged)
        }
        (GlassboxFamily::Incremental, true) => {
            let lambda = match lambda_fraction {
                Some(f) => f * logistic_lambda_max(x, y, rule)?,
                None => 0.0,
            };
            let fit = fit_logistic(x, y, Some(rule), lambda)?;
            let model = IncrementalModel {
                rule: rule.clone(),
                base: fit.base,
                delta: fit.delta.expect("rule given"),
                lambda,
            };
            (GlassboxKind::Incremental(model), fit.converged)
        }
    };
    Ok(GlassboxModel {
        family,
        kind,
        logistic,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::TypicalSide;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_toy_is_classified_perfectly() {
        let x = Array2::from_shape_fn((40, 4), |(i, j)| if j == 0 { i as f64 } else { ((i * 7 + j) % 5) as f64 });
        let y: Array1<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
        let rule = PartitionRule::new(1, 3.0, TypicalSide::Below);
        for family in GlassboxFamily::ALL {
            let m = fit_glassbox(family, x.view(), y.view(), Task::Classification, &rule, Some(0.01), 0.0).unwrap();
            let correct = x
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(r, t)| (m.predict(r.as_slice().unwrap()) >= 0.5) == (**t >= 0.5))
                .count();
            assert_eq!(correct, 40, "{family:?}");
        }
    }

    #[test]
    fn logistic_recovers_generating_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let y: Array1<f64> = x
            .rows()
            .into_iter()
            .map(|r| {
                let p = sigmoid(0.5 + 1.5 * r[0] - 1.0 * r[1]);
                f64::from(u8::from(rng.random_range(0.0..1.0) < p))
            })
            .collect();
        let fit = fit_logistic(x.view(), y.view(), None, 0.0).unwrap();
        assert!(fit.converged);
        assert!((fit.base.intercept - 0.5).abs() < 0.15);
        assert!((fit.base.factors[0] - 1.5).abs() < 0.15);
        assert!((fit.base.factors[1] + 1.0).abs() < 0.15);
    }

    #[test]
    fn regression_glassbox_fits_labels() {
        let x = Array2::from_shape_fn((50, 4), |(i, j)| ((i * (j + 3)) % 17) as f64);
        let y: Array1<f64> = x.rows().into_iter().map(|r| 2.0 + r[0] - 3.0 * r[2]).collect();
        let rule = PartitionRule::new(0, 8.0, TypicalSide::Below);
        let m = fit_glassbox(GlassboxFamily::Global, x.view(), y.view(), Task::Regression, &rule, None, 0.0).unwrap();
        for (r, t) in x.rows().into_iter().zip(&y) {
            assert!((m.predict(r.as_slice().unwrap()) - t).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
