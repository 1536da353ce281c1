//! Proximal gradient descent for smooth losses plus a weighted L1 penalty.
//!
//! Accelerated (FISTA) steps with backtracking on the smooth term, soft
//! thresholding for the penalty, and a function-value restart that keeps the
//! objective sequence monotone.

use super::ExplainError;

/// A differentiable loss over a parameter vector.
pub trait SmoothLoss {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the loss value.
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOptions {
    /// Stop once the relative objective decrease of an accepted step falls
    /// below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions {
            rel_tol: 1e-9,
            max_iter: 50_000,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `prox_{t * w |.|}(v)`: shrink toward zero, returning exact zeros.
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

fn penalty(theta: &[f64], weights: &[f64]) -> f64 {
    theta
        .iter()
        .zip(weights)
        .map(|(t, w)| if *t == 0.0 { 0.0 } else { w * t.abs() })
        .sum()
}

/// Minimise `loss(theta) + sum_j weights[j] * |theta[j]|`.
///
/// Coordinates with weight 0 are unpenalized.
pub fn minimize(
    loss: &dyn SmoothLoss,
    weights: &[f64],
    start: &[f64],
    opts: &ProxOptions,
) -> Result<ProxResult, ExplainError> {
    let d = loss.dim();
    assert_eq!(weights.len(), d);
    assert_eq!(start.len(), d);

    let mut x: Vec<f64> = start
        .iter()
        .zip(weights)
        .map(|(&v, &w)| if w.is_infinite() { 0.0 } else { v })
        .collect();
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut step = opts.initial_step;
    let mut objective = loss.value(&x) + penalty(&x, weights);
    if !objective.is_finite() {
        return Err(ExplainError::Divergence { step });
    }
    let mut grad = vec![0.0; d];
    let mut candidate = vec![0.0; d];

    for iter in 1..=opts.max_iter {
        let fy = loss.value_and_gradient(&y, &mut grad);
        if !fy.is_finite() {
            return Err(ExplainError::Divergence { step });
        }
        // backtracking on the quadratic upper bound of the smooth term
        let f_candidate = loop {
            for j in 0..d {
                candidate[j] = soft_threshold(y[j] - step * grad[j], step * weights[j]);
            }
            let fc = loss.value(&candidate);
            if !fc.is_finite() && step < 1e-300 {
                return Err(ExplainError::Divergence { step });
            }
            let mut bound = fy;
            let mut dist = 0.0;
            for j in 0..d {
                let diff = candidate[j] - y[j];
                bound += grad[j] * diff;
                dist += diff * diff;
            }
            bound += dist / (2.0 * step);
            if fc.is_finite() && fc <= bound + 1e-12 * bound.abs() {
                break fc;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(ExplainError::Divergence { step });
            }
        };
        let new_objective = f_candidate + penalty(&candidate, weights);
        if !new_objective.is_finite() {
            return Err(ExplainError::Divergence { step });
        }
        if new_objective > objective {
            // restart: drop momentum and retry from the last accepted point
            momentum = 1.0;
            y.copy_from_slice(&x);
            continue;
        }
        let decrease = objective - new_objective;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        for j in 0..d {
            y[j] = candidate[j] + beta * (candidate[j] - x[j]);
        }
        x.copy_from_slice(&candidate);
        momentum = next_momentum;
        let previous = objective;
        objective = new_objective;
        // let the step grow back slowly after backtracking
        step *= 1.1;
        if decrease <= opts.rel_tol * previous.abs().max(f64::MIN_POSITIVE) {
            return Ok(ProxResult {
                theta: x,
                objective,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(ProxResult {
        theta: x,
        objective,
        iterations: opts.max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `sum_j (theta_j - c_j)^2` with a known separable lasso solution.
    struct Separable(Vec<f64>);

    impl SmoothLoss for Separable {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, theta: &[f64]) -> f64 {
            theta.iter().zip(&self.0).map(|(t, c)| (t - c).powi(2)).sum()
        }
        fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            for (g, (t, c)) in grad.iter_mut().zip(theta.iter().zip(&self.0)) {
                *g = 2.0 * (t - c);
            }
            self.value(theta)
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn separable_lasso_closed_form() {
        let c = vec![3.0, -0.2, 0.4, -5.0];
        let lambda = 1.0;
        let res = minimize(&Separable(c.clone()), &[lambda; 4], &[0.0; 4], &ProxOptions::default()).unwrap();
        assert!(res.converged);
        for (t, cj) in res.theta.iter().zip(&c) {
            let expected = soft_threshold(*cj, lambda / 2.0);
            assert!((t - expected).abs() < 1e-6, "{t} vs {expected}");
        }
        assert_eq!(res.theta[1], 0.0);
        assert_eq!(res.theta[2], 0.0);
    }

    #[test]
    fn infinite_weight_pins_zero() {
        let res = minimize(
            &Separable(vec![1.0, 2.0]),
            &[0.0, f64::INFINITY],
            &[0.0, 7.0],
            &ProxOptions::default(),
        )
        .unwrap();
        assert_eq!(res.theta[1], 0.0);
        assert!((res.theta[0] - 1.0).abs() < 1e-6);
    }
}
