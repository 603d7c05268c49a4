//! Small dense kernels used by the regression engines.

use crate::design::Matrix;

/// Greedy Gram-Schmidt QR of `diag(sqrt_w) * X` over columns in order.
///
/// Columns whose residual norm after projection falls below `rel_tol` times
/// their own norm are dropped. Returns kept column indices, the orthonormal
/// basis (column-major, one `Vec` per kept column) and the upper-triangular
/// factor `r[k][l]` (row k, column l, l >= k).
pub(crate) struct GreedyQr {
    pub kept: Vec<usize>,
    pub pruned: Vec<usize>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

pub(crate) fn greedy_qr(x: &Matrix, sqrt_w: &[f64], rel_tol: f64) -> GreedyQr {
    let n = x.nrows();
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut rcols: Vec<Vec<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let mut v: Vec<f64> = (0..n).map(|i| x.get(i, j) * sqrt_w[i]).collect();
        let norm0 = dot(&v, &v).sqrt();
        let mut coef = vec![0.0; q.len()];
        // Two passes of modified Gram-Schmidt keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let c = dot(qk, &v);
                coef[k] += c;
                for (vi, qi) in v.iter_mut().zip(qk) {
                    *vi -= c * qi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || !norm.is_finite() || norm <= rel_tol * norm0 {
            pruned.push(j);
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        coef.push(norm);
        q.push(v);
        rcols.push(coef);
        kept.push(j);
    }
    let k = kept.len();
    let mut r = vec![vec![0.0; k]; k];
    for (l, col) in rcols.iter().enumerate() {
        for (row, &val) in col.iter().enumerate() {
            r[row][l] = val;
        }
    }
    GreedyQr { kept, pruned, q, r }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `R x = b` for upper-triangular `R`.
pub(crate) fn back_substitute(r: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= r[i][j] * x[j];
        }
        x[i] = s / r[i][i];
    }
    x
}

/// Inverse of an upper-triangular matrix.
pub(crate) fn upper_inverse(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = r.len();
    let mut inv = vec![vec![0.0; k]; k];
    for col in 0..k {
        let mut e = vec![0.0; k];
        e[col] = 1.0;
        let x = back_substitute(r, &e);
        for row in 0..k {
            inv[row][col] = x[row];
        }
    }
    inv
}

/// `R^{-1} R^{-T}` given `R^{-1}`.
pub(crate) fn gram_of_inverse(rinv: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = rinv.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s: f64 = (j.max(i)..k).map(|m| rinv[i][m] * rinv[j][m]).sum();
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}

/// Cholesky solve of a symmetric positive definite system; `None` if not SPD.
pub(crate) fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i][j];
            for m in 0..j {
                s -= l[i][m] * l[j][m];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= l[i][m] * y[m];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for m in i + 1..k {
            s -= l[m][i] * x[m];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
