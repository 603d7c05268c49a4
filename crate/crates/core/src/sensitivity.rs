//! Omitted-variable-bias sensitivity: partial R², robustness values and bias contours.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, Field};
use crate::design::{build_design, Formula};
use crate::error::{Error, Result};
use crate::estimation::{fit_ols, OlsFit, OlsOptions};

/// Partial R² of a coefficient from its t statistic.
pub fn partial_r2(t_value: f64, dof: usize) -> f64 {
    let t2 = t_value * t_value;
    t2 / (t2 + dof as f64)
}

/// Robustness value: the partial R² an unobserved confounder needs with both
/// treatment and outcome to reduce the estimate by `100·q`% (or, with `alpha`,
/// to make it insignificant at that level).
pub fn robustness_value(t_value: f64, dof: usize, q: f64, alpha: Option<f64>) -> Result<f64> {
    if dof < 1 {
        return Err(Error::invalid("robustness value needs dof >= 1"));
    }
    let mut fq = q * t_value.abs() / (dof as f64).sqrt();
    if let Some(a) = alpha {
        if dof < 2 {
            return Err(Error::invalid("robustness value with alpha needs dof >= 2"));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::invalid(format!("alpha {a} outside (0, 1)")));
        }
        let df = (dof - 1) as f64;
        let t_crit = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?.inverse_cdf(1.0 - a / 2.0);
        fq = (fq - t_crit / df.sqrt()).max(0.0);
    }
    let f2 = fq * fq;
    Ok(0.5 * ((f2 * f2 + 4.0 * f2).sqrt() - f2))
}

/// Bias magnitude implied by a confounder with partial R² `r2_zu` (treatment) and `r2_yu` (outcome).
pub fn bias_bound(se: f64, dof: usize, r2_zu: f64, r2_yu: f64) -> f64 {
    se * (dof as f64).sqrt() * (r2_yu * r2_zu / (1.0 - r2_zu)).sqrt()
}

/// Estimate after removing the bias, moved toward zero.
pub fn adjusted_estimate(estimate: f64, se: f64, dof: usize, r2_zu: f64, r2_yu: f64) -> f64 {
    let sign = if estimate < 0.0 { -1.0 } else { 1.0 };
    estimate - sign * bias_bound(se, dof, r2_zu, r2_yu)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourGrid {
    pub estimate: f64,
    pub se: f64,
    pub dof: usize,
    /// Axis values, shared by both axes: `k · 0.5 / resolution`.
    pub axis: Vec<f64>,
    /// `values[i][j]` is the adjusted estimate at `r2_zu = axis[i]`, `r2_yu = axis[j]`.
    pub values: Vec<Vec<f64>>,
    /// `(r2_zu, r2_yu)` pairs on which the adjusted estimate is exactly zero.
    pub zero_contour: Vec<(f64, f64)>,
}

impl ContourGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,r2_zu,r2_yu,adjusted_estimate\n");
        for (i, zu) in self.axis.iter().enumerate() {
            for (j, yu) in self.axis.iter().enumerate() {
                out.push_str(&format!("grid,{zu},{yu},{}\n", self.values[i][j]));
            }
        }
        for (zu, yu) in &self.zero_contour {
            out.push_str(&format!("zero_contour,{zu},{yu},0\n"));
        }
        out
    }
}

pub fn contour_data(estimate: f64, se: f64, dof: usize, resolution: usize) -> Result<ContourGrid> {
    if resolution < 2 {
        return Err(Error::invalid("contour grid needs at least 2 points per axis"));
    }
    if !(se >= 0.0) {
        return Err(Error::invalid("standard error must be nonnegative"));
    }
    let axis: Vec<f64> = (0..resolution).map(|k| k as f64 * 0.5 / resolution as f64).collect();
    let values = axis
        .iter()
        .map(|&zu| axis.iter().map(|&yu| adjusted_estimate(estimate, se, dof, zu, yu)).collect())
        .collect();
    // Solve bias(zu, yu) = |estimate| for yu along the zu axis.
    let scale = se * (dof as f64).sqrt();
    let mut zero_contour = Vec::new();
    if scale > 0.0 {
        for &zu in axis.iter().filter(|&&zu| zu > 0.0) {
            let yu = (estimate / scale).powi(2) * (1.0 - zu) / zu;
            if yu < 1.0 {
                zero_contour.push((zu, yu));
            }
        }
    }
    Ok(ContourGrid { estimate, se, dof, axis, values, zero_contour })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Benchmark {
    pub label: String,
    /// Partial R² of the covariate group with treatment, given the other covariates.
    pub r2_treatment: f64,
    /// Partial R² of the covariate group with the outcome, given treatment and the other covariates.
    pub r2_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub estimate: f64,
    pub se: f64,
    pub t_value: f64,
    pub dof: usize,
    pub alpha: f64,
    pub partial_r2_treatment: f64,
    pub rv_point: f64,
    pub rv_alpha: f64,
    pub benchmarks: Vec<Benchmark>,
}

impl SensitivityReport {
    pub fn from_t(estimate: f64, se: f64, t_value: f64, dof: usize, alpha: f64) -> Result<Self> {
        Ok(SensitivityReport {
            estimate,
            se,
            t_value,
            dof,
            alpha,
            partial_r2_treatment: partial_r2(t_value, dof),
            rv_point: robustness_value(t_value, dof, 1.0, None)?,
            rv_alpha: robustness_value(t_value, dof, 1.0, Some(alpha))?,
            benchmarks: Vec::new(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("sensitivity to an unobserved confounder\n");
        s.push_str(&format!("estimate: {:.4}\n", self.estimate));
        s.push_str(&format!("se: {:.4}\n", self.se));
        s.push_str(&format!("t: {:.3}\n", self.t_value));
        s.push_str(&format!("dof: {}\n", self.dof));
        s.push_str(&format!("partial_r2_treatment: {:.4}\n", self.partial_r2_treatment));
        s.push_str(&format!("rv_point: {:.4}\n", self.rv_point));
        s.push_str(&format!("rv_alpha (alpha = {}): {:.4}\n", self.alpha, self.rv_alpha));
        if !self.benchmarks.is_empty() {
            s.push_str("benchmarks (partial R2 with treatment, with outcome):\n");
            for b in &self.benchmarks {
                s.push_str(&format!("  {}: {:.4}, {:.4}\n", b.label, b.r2_treatment, b.r2_outcome));
            }
        }
        s
    }
}

fn rss(fit: &OlsFit) -> f64 {
    fit.residuals.iter().map(|r| r * r).sum()
}

fn group_partial_r2(d: &Dataset, y: &[f64], full: &Formula, reduced: &Formula) -> Result<f64> {
    let fit_full = fit_ols(&build_design(d, full)?, y, &OlsOptions::default())?;
    let fit_red = fit_ols(&build_design(d, reduced)?, y, &OlsOptions::default())?;
    let (a, b) = (rss(&fit_red), rss(&fit_full));
    Ok(if a > 0.0 { ((a - b) / a).max(0.0) } else { 0.0 })
}

/// Sensitivity of the treatment coefficient in `outcome ~ treatment + spec`,
/// with leave-one-covariate-out benchmarks for every field in `spec`.
pub fn sensitivity_analysis(d: &Dataset, spec: &Formula, alpha: f64) -> Result<SensitivityReport> {
    d.ensure_estimable()?;
    let with_z = spec.with_treatment();
    let x = build_design(d, &with_z)?;
    let fit = fit_ols(&x, d.outcome_log(), &OlsOptions { protect: vec![1], ..Default::default() })?;
    let mut report = SensitivityReport::from_t(fit.coefficients[1], fit.standard_errors[1], fit.t_values[1], fit.residual_df, alpha)?;
    let z = d.treatment();
    for field in [Field::Title, Field::UniversityClass, Field::Department, Field::WorkingYears, Field::ProductivityLog, Field::HasProfile] {
        if !spec.references(field) {
            continue;
        }
        let reduced = spec.without_field(field);
        report.benchmarks.push(Benchmark {
            label: field.name().to_string(),
            r2_treatment: group_partial_r2(d, &z, spec, &reduced)?,
            r2_outcome: group_partial_r2(d, d.outcome_log(), &with_z, &reduced.with_treatment())?,
        });
    }
    Ok(report)
}
