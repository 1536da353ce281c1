use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_instance, ExplainError, Result};
use crate::linalg::least_squares;

/// Smallest training set a linear factor model is fit on.
pub const MIN_FIT_ROWS: usize = 6;

/// Intercept ("adjustment") plus one factor per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFactorModel {
    pub intercept: f64,
    pub factors: Vec<f64>,
}

impl LinearFactorModel {
    pub fn new(intercept: f64, factors: Vec<f64>) -> Self {
        LinearFactorModel { intercept, factors }
    }

    pub fn zeros(p: usize) -> Self {
        LinearFactorModel {
            intercept: 0.0,
            factors: vec![0.0; p],
        }
    }

    pub fn n_features(&self) -> usize {
        self.factors.len()
    }

    /// `intercept + sum_r factor_r * x_r`, accumulated left to right.
    ///
    /// Explanation tables sum partial contributions in the same order, so
    /// their totals reproduce this value bit for bit.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for (w, v) in self.factors.iter().zip(x) {
            acc += w * v;
        }
        acc
    }

    pub fn estimate(&self, x: &[f64]) -> Result<f64> {
        check_instance(x, self.factors.len())?;
        Ok(self.eval(x))
    }

    /// Elementwise sum, used for base + delta.
    pub fn plus(&self, other: &LinearFactorModel) -> LinearFactorModel {
        LinearFactorModel {
            intercept: self.intercept + other.intercept,
            factors: self
                .factors
                .iter()
                .zip(&other.factors)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// L1 norm over intercept and factors.
    pub fn l1_norm(&self) -> f64 {
        self.intercept.abs() + self.factors.iter().map(|w| w.abs()).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.factors.iter().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFit {
    pub model: LinearFactorModel,
    /// The design was rank deficient and a 1e-8 ridge was added.
    pub ridge_fallback: bool,
}

/// OLS fit of `target` on `x` with an intercept.
pub fn fit_ols(
    x: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    weights: Option<&[f64]>,
) -> Result<GlobalFit> {
    if x.nrows() < MIN_FIT_ROWS {
        return Err(ExplainError::TooFewRows {
            needed: MIN_FIT_ROWS,
            have: x.nrows(),
        });
    }
    let ls = least_squares(x, target, weights);
    Ok(GlobalFit {
        model: LinearFactorModel::new(ls.intercept, ls.coefficients),
        ridge_fallback: ls.ridge_fallback,
    })
}

/// Global explainer: OLS against the predictor's outputs.
pub fn fit_global(x: ArrayView2<'_, f64>, predicted: ArrayView1<'_, f64>) -> Result<GlobalFit> {
    fit_ols(x, predicted, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 4), |(_, j)| rng.random_range(0.0..1.0) * (1.0 + j as f64 * 10.0));
        let y = x
            .rows()
            .into_iter()
            .map(|r| 1.0 + r[0] - 0.3 * r[1] + 0.01 * r[2] * r[2] + rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn exact_linear_target_recovered() {
        let (x, _) = random_data(30, 1);
        let y: Array1<f64> = x.rows().into_iter().map(|r| 3.0 + 2.0 * r[0]).collect();
        let fit = fit_global(x.view(), y.view()).unwrap();
        assert!((fit.model.intercept - 3.0).abs() < 1e-9);
        assert!((fit.model.factors[0] - 2.0).abs() < 1e-9);
        for w in &fit.model.factors[1..] {
            assert!(w.abs() < 1e-9);
        }
    }

    #[test]
    fn ols_optimality_under_perturbation() {
        let (x, y) = random_data(80, 2);
        let fit = fit_global(x.view(), y.view()).unwrap();
        let mse = |m: &LinearFactorModel| {
            x.rows()
                .into_iter()
                .zip(y.iter())
                .map(|(r, t)| (m.eval(r.as_slice().unwrap()) - t).powi(2))
                .sum::<f64>()
                / y.len() as f64
        };
        let base = mse(&fit.model);
        for j in 0..5 {
            for delta in [-1e-3, 1e-3] {
                let mut m = fit.model.clone();
                if j == 0 {
                    m.intercept += delta;
                } else {
                    m.factors[j - 1] += delta;
                }
                assert!(mse(&m) >= base);
            }
        }
    }

    #[test]
    fn too_few_rows() {
        let (x, y) = random_data(5, 3);
        assert!(matches!(
            fit_global(x.view(), y.view()),
            Err(ExplainError::TooFewRows { needed: 6, have: 5 })
        ));
    }

    #[test]
    fn estimate_examples() {
        let m = LinearFactorModel::new(0.0, vec![17.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.estimate(&[1.75, 2.0, 7.0, 30.0]).unwrap(), 29.75);
        let z = LinearFactorModel::zeros(4);
        assert_eq!(z.estimate(&[3.0, -1.0, 8.0, 1e6]).unwrap(), 0.0);
        assert!(matches!(
            m.estimate(&[1.0, f64::INFINITY, 0.0, 0.0]),
            Err(ExplainError::NonFinite { index: 1, .. })
        ));
    }
}
