use super::linalg::{cholesky_solve, expit, greedy_qr, softplus};
use super::ols::COLLINEAR_TOL;
use crate::design::DesignMatrix;
use crate::error::{Error, Result};

/// Bound applied to fitted probabilities handed to downstream estimators.
pub const PROB_CLAMP: f64 = 1e-6;
/// Coefficient norm past which the fit is treated as separated.
pub const SEPARATION_NORM: f64 = 100.0;

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on `max |X^T (z - p)|`.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub labels: Vec<String>,
    /// Log-odds coefficients; `NaN` for pruned columns.
    pub coefficients: Vec<f64>,
    /// Fitted probabilities clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fitted_probabilities: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub pruned: Vec<String>,
    /// `max |X^T (z - p)|` at the returned coefficients (unclamped probabilities).
    pub max_score: f64,
}

impl LogisticFit {
    /// Linear predictor for new rows.
    pub fn linear_predictor(&self, x: &crate::design::Matrix) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&self.coefficients)
                    .filter(|(_, b)| b.is_finite())
                    .map(|(v, b)| v * b)
                    .sum()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &crate::design::Matrix) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(|e| clamp_prob(expit(e))).collect()
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn log_likelihood(rows: &[Vec<f64>], z: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(z)
        .map(|(r, &zi)| {
            let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            zi * eta - softplus(eta)
        })
        .sum()
}

/// Logistic regression by Newton / iteratively reweighted least squares with step halving.
pub fn fit_logistic(x: &DesignMatrix, z: &[f64], opts: &LogisticOptions) -> Result<LogisticFit> {
    let n = x.nrows();
    let p = x.ncols();
    if z.len() != n {
        return Err(Error::invalid(format!("{} labels for {} rows", z.len(), n)));
    }
    if z.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::invalid("logistic labels must be 0 or 1"));
    }
    let ones = z.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleArm(format!("{ones} positives of {n}")));
    }
    if n <= p {
        return Err(Error::TooFewObservations { n, p });
    }

    let qr = greedy_qr(&x.values, &vec![1.0; n], COLLINEAR_TOL);
    if qr.kept.is_empty() {
        return Err(Error::RankDeficient(x.labels.clone()));
    }
    let pruned: Vec<String> = qr.pruned.iter().map(|&j| x.labels[j].clone()).collect();
    let k = qr.kept.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| qr.kept.iter().map(|&j| x.values.get(i, j)).collect()).collect();

    let mut beta = vec![0.0; k];
    let mut ll = log_likelihood(&rows, z, &beta);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut max_score;
    loop {
        let probs: Vec<f64> = rows.iter().map(|r| expit(r.iter().zip(&beta).map(|(a, b)| a * b).sum())).collect();
        let mut score = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for (r, (&pi, &zi)) in rows.iter().zip(probs.iter().zip(z)) {
            let resid = zi - pi;
            let wi = pi * (1.0 - pi);
            for a in 0..k {
                score[a] += r[a] * resid;
                if r[a] != 0.0 {
                    let ra = r[a] * wi;
                    for b in 0..=a {
                        hess[a][b] += ra * r[b];
                    }
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[b][a] = hess[a][b];
            }
        }
        max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if max_score < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let Some(step) = cholesky_solve(&hess, &score) else {
            separated = true;
            break;
        };
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cll = log_likelihood(&rows, z, &cand);
            if cll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta.iter().map(|b| b * b).sum::<f64>().sqrt() > SEPARATION_NORM {
            separated = true;
            break;
        }
    }
    if separated {
        log::warn!("logistic fit: coefficients diverging (possible separation); returning unconverged fit");
        converged = false;
    } else if !converged {
        log::warn!("logistic fit: no convergence after {iterations} iterations (max score {max_score:.3e})");
    }

    let mut coefficients = vec![f64::NAN; p];
    for (slot, &j) in qr.kept.iter().enumerate() {
        coefficients[j] = beta[slot];
    }
    let fitted_probabilities =
        rows.iter().map(|r| clamp_prob(expit(r.iter().zip(&beta).map(|(a, b)| a * b).sum()))).collect();
    Ok(LogisticFit { labels: x.labels.clone(), coefficients, fitted_probabilities, converged, iterations, pruned, max_score })
}
