use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linear::LinearFactorModel;
use super::{check_instance, Blackbox, ExplainError, Result};
use crate::linalg::least_squares;

/// Perturbation-sampling settings for Local explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub n_samples: usize,
    /// Multiplier on each feature's standard deviation for perturbations.
    pub perturb_scale: f64,
    /// Kernel width on standardized distance.
    pub kernel_width: f64,
    pub seed: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            n_samples: 1000,
            perturb_scale: 1.0,
            kernel_width: 0.75 * 2.0,
            seed: 0,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 50 {
            return Err(ExplainError::InvalidLocalConfig(format!(
                "n_samples must be >= 50, got {}",
                self.n_samples
            )));
        }
        if !(self.kernel_width.is_finite() && self.kernel_width > 0.0) {
            return Err(ExplainError::InvalidLocalConfig(format!(
                "kernel_width must be finite and > 0, got {}",
                self.kernel_width
            )));
        }
        if !(self.perturb_scale.is_finite() && self.perturb_scale > 0.0) {
            return Err(ExplainError::InvalidLocalConfig(format!(
                "perturb_scale must be finite and > 0, got {}",
                self.perturb_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub model: LinearFactorModel,
    /// Features with zero spread; their factor is fixed at 0.
    pub degenerate_features: Vec<usize>,
}

/// Fit a kernel-weighted linear model around `target`.
///
/// Sample 0 is the target itself; the rest are Normal perturbations with
/// per-feature standard deviation `perturb_scale * feature_std[r]`.
pub fn fit_local(
    target: &[f64],
    blackbox: &dyn Blackbox,
    feature_std: &[f64],
    config: &LocalConfig,
) -> Result<LocalFit> {
    config.validate()?;
    let p = feature_std.len();
    check_instance(target, p)?;

    let degenerate: Vec<usize> = (0..p)
        .filter(|&j| !(feature_std[j].is_finite() && feature_std[j] > 0.0))
        .collect();
    let sd: Vec<f64> = feature_std
        .iter()
        .map(|&s| if s.is_finite() && s > 0.0 { s } else { 0.0 })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_samples;
    let mut x = Array2::<f64>::zeros((n, p));
    let mut weights = vec![0.0; n];
    let mut y = Array1::<f64>::zeros(n);
    let width2 = config.kernel_width * config.kernel_width;
    for i in 0..n {
        let mut d2 = 0.0;
        for j in 0..p {
            let z: f64 = if i == 0 { 0.0 } else { StandardNormal.sample(&mut rng) };
            let step = z * config.perturb_scale;
            x[[i, j]] = target[j] + step * sd[j];
            if sd[j] > 0.0 {
                d2 += step * step;
            }
        }
        weights[i] = (-d2 / width2).exp();
    }
    for i in 0..n {
        let row = x.row(i);
        y[i] = blackbox.predict_row(row.as_slice().expect("standard layout"));
    }
    if weights.iter().all(|w| *w == 0.0) {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }

    let ls = least_squares(x.view(), y.view(), Some(&weights));
    let mut factors = ls.coefficients;
    for &j in &degenerate {
        factors[j] = 0.0;
    }
    let model = LinearFactorModel::new(ls.intercept, factors);
    if !model.is_finite() {
        return Err(ExplainError::NonFinite {
            index: 0,
            value: f64::NAN,
        });
    }
    Ok(LocalFit {
        model,
        degenerate_features: degenerate,
    })
}
