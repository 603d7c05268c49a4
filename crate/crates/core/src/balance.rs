//! Covariate balance: standardized mean differences before and after adjustment.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{factor_levels, Dataset, Field};
use crate::error::{Error, Result};
use crate::estimators::MatchResult;

/// Conventional balance threshold on |SMD|.
pub const SMD_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

impl CovariateKind {
    pub fn label(self) -> &'static str {
        match self {
            CovariateKind::Continuous => "continuous",
            CovariateKind::Binary => "binary",
        }
    }
}

/// Weighted mean and frequency-weighted variance (denominator `sum(w) - 1`).
fn arm_moments(values: &[f64], treat: &[bool], w: Option<&[f64]>, arm: bool) -> (f64, f64, f64) {
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let mut sw = 0.0;
    let mut swx = 0.0;
    for i in 0..values.len() {
        if treat[i] == arm {
            sw += weight(i);
            swx += weight(i) * values[i];
        }
    }
    let mean = swx / sw;
    let mut ss = 0.0;
    for i in 0..values.len() {
        if treat[i] == arm {
            ss += weight(i) * (values[i] - mean) * (values[i] - mean);
        }
    }
    let var = if sw > 1.0 { ss / (sw - 1.0) } else { 0.0 };
    (sw, mean, var)
}

/// Standardized mean difference, treated minus control.
pub fn smd(values: &[f64], treat: &[bool], w: Option<&[f64]>, kind: CovariateKind) -> Result<f64> {
    if values.len() != treat.len() || w.is_some_and(|w| w.len() != values.len()) {
        return Err(Error::invalid("smd inputs differ in length"));
    }
    if w.is_some_and(|w| w.iter().any(|v| !(*v >= 0.0) || !v.is_finite())) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let (swt, mt, vt) = arm_moments(values, treat, w, true);
    let (swc, mc, vc) = arm_moments(values, treat, w, false);
    if !(swt > 0.0 && swc > 0.0) {
        return Err(Error::SingleArm("smd needs positive weight in both arms".into()));
    }
    let pooled = match kind {
        CovariateKind::Continuous => (vt + vc) / 2.0,
        CovariateKind::Binary => (mt * (1.0 - mt) + mc * (1.0 - mc)) / 2.0,
    };
    if pooled <= 0.0 {
        if mt == mc {
            return Ok(0.0);
        }
        return Err(Error::DegenerateScale("values".into()));
    }
    Ok((mt - mc) / pooled.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub label: String,
    pub kind: CovariateKind,
    pub smd_before: f64,
    pub smd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    pub fn max_abs_before(&self) -> f64 {
        self.rows.iter().map(|r| r.smd_before.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_after(&self) -> f64 {
        self.rows.iter().map(|r| r.smd_after.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,kind,smd_before,smd_after\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.label, r.kind.label(), r.smd_before, r.smd_after));
        }
        out
    }
}

/// How the "after" column is formed.
#[derive(Debug, Clone, Copy)]
pub enum Adjustment<'a> {
    None,
    Matched(&'a MatchResult),
    Weights(&'a [f64]),
}

/// Diagnostic covariates: every title, class and department indicator, then
/// working years and log productivity.
pub fn diagnostic_covariates(d: &Dataset) -> Result<Vec<(String, CovariateKind, Vec<f64>)>> {
    let mut out = Vec::new();
    for field in [Field::Title, Field::UniversityClass, Field::Department] {
        for (k, level) in factor_levels(field).iter().enumerate() {
            let col = (0..d.len()).map(|i| if d.level(field, i) == Some(k) { 1.0 } else { 0.0 }).collect();
            out.push((format!("{}[{}]", field.name(), level), CovariateKind::Binary, col));
        }
    }
    out.push((
        Field::WorkingYears.name().to_string(),
        CovariateKind::Continuous,
        d.records().iter().map(|r| r.working_years).collect(),
    ));
    out.push((Field::ProductivityLog.name().to_string(), CovariateKind::Continuous, d.productivity_complete()?));
    Ok(out)
}

pub fn balance_table(d: &Dataset, adjustment: Adjustment<'_>) -> Result<BalanceTable> {
    let treat = d.treated_mask();
    let after_weights: Option<Vec<f64>> = match adjustment {
        Adjustment::None => None,
        Adjustment::Matched(m) => {
            if m.pairs.iter().any(|&(t, c)| t >= d.len() || c >= d.len()) {
                return Err(Error::invalid("match result refers to rows outside the dataset"));
            }
            Some(m.weights(d.len()))
        }
        Adjustment::Weights(w) => {
            if w.len() != d.len() {
                return Err(Error::invalid(format!("{} weights for {} rows", w.len(), d.len())));
            }
            Some(w.to_vec())
        }
    };
    let named = |label: &str, e: Error| match e {
        Error::DegenerateScale(_) => Error::DegenerateScale(label.to_string()),
        other => other,
    };
    let mut rows = Vec::new();
    for (label, kind, values) in diagnostic_covariates(d)? {
        let smd_before = smd(&values, &treat, None, kind).map_err(|e| named(&label, e))?;
        let smd_after = match &after_weights {
            None => smd_before,
            Some(w) => smd(&values, &treat, Some(w), kind).map_err(|e| named(&label, e))?,
        };
        rows.push(BalanceRow { label, kind, smd_before, smd_after });
    }
    Ok(BalanceTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LovePoint {
    pub label: String,
    pub smd_before: f64,
    pub smd_after: f64,
    pub threshold: f64,
}

/// Rows ordered by |smd_before| descending; ties ordered by label.
pub fn love_plot_data(t: &BalanceTable) -> Result<Vec<LovePoint>> {
    if t.rows.is_empty() {
        return Err(Error::invalid("balance table is empty"));
    }
    let mut rows: Vec<&BalanceRow> = t.rows.iter().collect();
    rows.sort_by(|a, b| match b.smd_before.abs().total_cmp(&a.smd_before.abs()) {
        Ordering::Equal => a.label.cmp(&b.label),
        o => o,
    });
    Ok(rows
        .into_iter()
        .map(|r| LovePoint { label: r.label.clone(), smd_before: r.smd_before, smd_after: r.smd_after, threshold: SMD_THRESHOLD })
        .collect())
}

pub fn love_plot_csv(points: &[LovePoint]) -> String {
    let mut out = String::from("label,smd_before,smd_after,threshold\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.label, p.smd_before, p.smd_after, p.threshold));
    }
    out
}
