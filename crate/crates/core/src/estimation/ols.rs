use statrs::distribution::{ContinuousCDF, StudentsT};

use super::linalg::{dot, gram_of_inverse, greedy_qr, upper_inverse};
use crate::design::{DesignMatrix, Matrix};
use crate::error::{Error, Result};

/// Relative residual norm below which a column counts as collinear.
pub const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq)]
pub enum SeKind {
    /// Homoskedastic normal-equation variance.
    #[default]
    Classical,
    /// HC1 sandwich.
    Robust,
    /// Cluster sandwich; one cluster id per row.
    Clustered(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct OlsOptions<'a> {
    pub weights: Option<&'a [f64]>,
    pub se: SeKind,
    /// Columns that must survive collinearity pruning (e.g. the treatment indicator).
    pub protect: Vec<usize>,
}

/// Weighted least-squares fit. Pruned columns carry `NaN` in every coefficient-aligned vector.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residual_df: usize,
    pub weights_used: bool,
    pub pruned: Vec<String>,
    pub residuals: Vec<f64>,
    pub sigma: f64,
}

impl OlsFit {
    pub fn coef_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Linear predictor on new rows; pruned columns contribute nothing.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
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
}

pub(crate) fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::invalid(format!("{} weights for {} rows", w.len(), n)));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("all weights are zero"));
    }
    Ok(())
}

pub fn fit_ols(x: &DesignMatrix, y: &[f64], opts: &OlsOptions) -> Result<OlsFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::invalid(format!("{} outcomes for {} rows", y.len(), n)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("outcome contains non-finite values"));
    }
    let ones;
    let w = match opts.weights {
        Some(w) => {
            check_weights(w, n)?;
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let n_eff = w.iter().filter(|v| **v > 0.0).count();
    if n_eff <= p {
        return Err(Error::TooFewObservations { n: n_eff, p });
    }
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();

    let qr = greedy_qr(&x.values, &sqrt_w, COLLINEAR_TOL);
    let pruned: Vec<String> = qr.pruned.iter().map(|&j| x.labels[j].clone()).collect();
    let blocked: Vec<String> = qr.pruned.iter().filter(|j| opts.protect.contains(j)).map(|&j| x.labels[j].clone()).collect();
    if !blocked.is_empty() || qr.kept.is_empty() {
        return Err(Error::RankDeficient(if blocked.is_empty() { pruned } else { blocked }));
    }
    if !pruned.is_empty() {
        log::debug!("pruned collinear columns: {}", pruned.join(", "));
    }

    let k = qr.kept.len();
    let wy: Vec<f64> = y.iter().zip(&sqrt_w).map(|(a, b)| a * b).collect();
    let qty: Vec<f64> = qr.q.iter().map(|qk| dot(qk, &wy)).collect();
    let beta_kept = super::linalg::back_substitute(&qr.r, &qty);

    let fitted: Vec<f64> = (0..n)
        .map(|i| qr.kept.iter().zip(&beta_kept).map(|(&j, b)| x.values.get(i, j) * b).sum())
        .collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let residual_df = n_eff - k;
    let rss: f64 = residuals.iter().zip(w).map(|(r, wi)| wi * r * r).sum();
    let sigma2 = rss / residual_df as f64;

    let rinv = upper_inverse(&qr.r);
    let bread = gram_of_inverse(&rinv);
    let cov = match &opts.se {
        SeKind::Classical => bread.iter().map(|row| row.iter().map(|v| v * sigma2).collect()).collect::<Vec<Vec<f64>>>(),
        SeKind::Robust => {
            let scores: Vec<(usize, Vec<f64>)> = (0..n)
                .map(|i| (i, qr.kept.iter().map(|&j| w[i] * residuals[i] * x.values.get(i, j)).collect()))
                .collect();
            let factor = n_eff as f64 / residual_df as f64;
            sandwich(&bread, scores.iter().map(|(_, s)| s.as_slice()), factor)
        }
        SeKind::Clustered(ids) => {
            if ids.len() != n {
                return Err(Error::invalid("cluster ids must have one entry per row"));
            }
            let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            for i in 0..n {
                if w[i] == 0.0 {
                    continue;
                }
                let g = groups.entry(ids[i]).or_insert_with(|| vec![0.0; k]);
                for (slot, &j) in g.iter_mut().zip(&qr.kept) {
                    *slot += w[i] * residuals[i] * x.values.get(i, j);
                }
            }
            let g = groups.len() as f64;
            if g < 2.0 {
                return Err(Error::invalid("clustered standard errors need at least two clusters"));
            }
            let factor = g / (g - 1.0) * (n_eff as f64 - 1.0) / residual_df as f64;
            sandwich(&bread, groups.values().map(Vec::as_slice), factor)
        }
    };

    let tdist = StudentsT::new(0.0, 1.0, residual_df as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let mut coefficients = vec![f64::NAN; p];
    let mut standard_errors = vec![f64::NAN; p];
    let mut t_values = vec![f64::NAN; p];
    let mut p_values = vec![f64::NAN; p];
    for (slot, &j) in qr.kept.iter().enumerate() {
        let se = cov[slot][slot].max(0.0).sqrt();
        let t = beta_kept[slot] / se;
        coefficients[j] = beta_kept[slot];
        standard_errors[j] = se;
        t_values[j] = t;
        p_values[j] = if t.is_finite() { 2.0 * tdist.sf(t.abs()) } else { 0.0 };
    }

    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let tss: f64 = y.iter().zip(w).map(|(a, b)| b * (a - ybar) * (a - ybar)).sum();
    let r_squared = if x.has_intercept {
        if tss > 0.0 {
            (1.0 - rss / tss).clamp(0.0, 1.0)
        } else if rss == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let uss: f64 = y.iter().zip(w).map(|(a, b)| b * a * a).sum();
        if uss > 0.0 {
            (1.0 - rss / uss).clamp(0.0, 1.0)
        } else {
            1.0
        }
    };
    let df_model = if x.has_intercept { n_eff - 1 } else { n_eff };
    let adj_r_squared = (1.0 - (1.0 - r_squared) * df_model as f64 / residual_df as f64).clamp(0.0, 1.0);

    Ok(OlsFit {
        labels: x.labels.clone(),
        coefficients,
        standard_errors,
        t_values,
        p_values,
        r_squared,
        adj_r_squared,
        residual_df,
        weights_used: opts.weights.is_some(),
        pruned,
        residuals,
        sigma: sigma2.sqrt(),
    })
}

fn sandwich<'a>(bread: &[Vec<f64>], scores: impl Iterator<Item = &'a [f64]>, factor: f64) -> Vec<Vec<f64>> {
    let k = bread.len();
    let mut meat = vec![vec![0.0; k]; k];
    for s in scores {
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let mul = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..k).map(|i| (0..k).map(|j| (0..k).map(|m| a[i][m] * b[m][j]).sum()).collect()).collect()
    };
    let out = mul(&mul(bread, &meat), bread);
    out.into_iter().map(|row| row.into_iter().map(|v| v * factor).collect()).collect()
}
