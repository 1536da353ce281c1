//! Small dense linear algebra for least-squares fits.
//!
//! Problems here have at most a handful of columns, so a Cholesky solve on
//! standardized normal equations is both exact enough and cheap.

use ndarray::{ArrayView1, ArrayView2};

/// Ridge added to the standardized normal equations when the plain Cholesky
/// factorization hits a non-positive pivot.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Relative pivot threshold below which a Gram matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-12;

/// In-place Cholesky solve of the symmetric system `a * x = b`.
///
/// `a` is row-major `n x n`. Returns `None` if a pivot falls below
/// `PIVOT_TOL` times the largest diagonal entry.
pub fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0_f64, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= PIVOT_TOL * scale {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Solve `a * x = b`, retrying with `ridge` on the diagonal if singular.
/// The flag reports whether the ridge was needed.
pub fn solve_with_ridge(a: &[f64], b: &[f64], ridge: f64) -> (Vec<f64>, bool) {
    if let Some(x) = cholesky_solve(a, b) {
        return (x, false);
    }
    let n = b.len();
    let mut reg = a.to_vec();
    for i in 0..n {
        reg[i * n + i] += ridge;
    }
    match cholesky_solve(&reg, b) {
        Some(x) => (x, true),
        // Degenerate beyond repair (all-zero Gram); the minimum-norm answer.
        None => (vec![0.0; n], true),
    }
}

/// Result of an intercept-augmented least-squares fit in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Ridge fallback was applied because the design was rank deficient.
    pub ridge_fallback: bool,
    /// Columns with zero spread; their coefficients are fixed at 0.
    pub constant_columns: Vec<usize>,
}

/// Weighted least squares `min sum_k w_k (y_k - b0 - x_k . b)^2`.
///
/// Columns are centered and scaled internally; the returned coefficients are
/// mapped back to the original units.
pub fn least_squares(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    weights: Option<&[f64]>,
) -> LeastSquares {
    let n = x.nrows();
    let p = x.ncols();
    let w = |k: usize| weights.map_or(1.0, |w| w[k]);
    let wsum: f64 = (0..n).map(w).sum();

    let mut mean = vec![0.0; p];
    let mut ymean = 0.0;
    for k in 0..n {
        let wk = w(k);
        for j in 0..p {
            mean[j] += wk * x[[k, j]];
        }
        ymean += wk * y[k];
    }
    for m in &mut mean {
        *m /= wsum;
    }
    ymean /= wsum;

    let mut scale = vec![0.0; p];
    for k in 0..n {
        let wk = w(k);
        for j in 0..p {
            let d = x[[k, j]] - mean[j];
            scale[j] += wk * d * d;
        }
    }
    let mut constant_columns = Vec::new();
    for (j, s) in scale.iter_mut().enumerate() {
        *s = (*s / wsum).sqrt();
        // spread negligible relative to the column's magnitude
        if !(*s > 1e-12 * (1.0 + mean[j].abs())) {
            *s = 0.0;
            constant_columns.push(j);
        }
    }

    let active: Vec<usize> = (0..p).filter(|j| scale[*j] > 0.0).collect();
    let q = active.len();
    let mut gram = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    let mut z = vec![0.0; q];
    for k in 0..n {
        let wk = w(k);
        for (a, &j) in active.iter().enumerate() {
            z[a] = (x[[k, j]] - mean[j]) / scale[j];
        }
        let t = y[k] - ymean;
        for a in 0..q {
            rhs[a] += wk * z[a] * t;
            for b in 0..=a {
                gram[a * q + b] += wk * z[a] * z[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[b * q + a] = gram[a * q + b];
        }
    }
    let (beta, ridge_fallback) = if q == 0 {
        (Vec::new(), false)
    } else {
        solve_with_ridge(&gram, &rhs, RIDGE_FALLBACK)
    };

    let mut coefficients = vec![0.0; p];
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = beta[a] / scale[j];
    }
    let mut intercept = ymean;
    for j in 0..p {
        intercept -= coefficients[j] * mean[j];
    }
    LeastSquares {
        intercept,
        coefficients,
        ridge_fallback,
        constant_columns,
    }
}
