//! Percent-gap conversion and the method comparison table.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, Estimand, Method};

/// Percent gap implied by a log10-scale coefficient: `100·(1 − 10^β)`.
pub fn beta_to_gap_percent(beta: f64) -> f64 {
    100.0 * (1.0 - 10f64.powf(beta))
}

/// Gap interval from a coefficient interval. The map is decreasing, so the
/// endpoints swap.
pub fn gap_ci_percent(ci: (f64, f64)) -> (f64, f64) {
    let a = beta_to_gap_percent(ci.0);
    let b = beta_to_gap_percent(ci.1);
    (a.min(b), a.max(b))
}

/// Raw salary gap relative to the control-arm mean.
pub fn unadjusted_gap(mean_control: f64, mean_treated: f64) -> Result<f64> {
    if !(mean_control > 0.0) {
        return Err(Error::invalid(format!("control mean {mean_control} must be positive")));
    }
    Ok(100.0 * (mean_control - mean_treated) / mean_control)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SummaryRow {
    Unadjusted { gap_percent: f64 },
    Estimate { estimate: EffectEstimate, truth: Option<f64> },
}

impl SummaryRow {
    pub fn method_label(&self) -> &'static str {
        match self {
            SummaryRow::Unadjusted { .. } => "UNADJUSTED",
            SummaryRow::Estimate { estimate, .. } => estimate.method.label(),
        }
    }

    pub fn gap_percent(&self) -> f64 {
        match self {
            SummaryRow::Unadjusted { gap_percent } => *gap_percent,
            SummaryRow::Estimate { estimate, .. } => beta_to_gap_percent(estimate.beta),
        }
    }

    /// Whether `beta` lies within two standard errors of the known truth.
    pub fn within_2se(&self) -> Option<bool> {
        match self {
            SummaryRow::Estimate { estimate, truth: Some(t) } => Some((estimate.beta - t).abs() <= 2.0 * estimate.se),
            _ => None,
        }
    }
}

/// Rows in the fixed order Unadjusted, OLS, OLS_INTERACT, PSM, IPTW, PS_ADJUST, FOREST.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

fn order_key(method: Method) -> usize {
    Method::ALL.iter().position(|m| *m == method).unwrap_or(usize::MAX)
}

impl SummaryTable {
    /// Assembles the table; `truth` maps each estimand to its known value, if any.
    pub fn build(unadjusted_gap_percent: Option<f64>, estimates: &[EffectEstimate], truth: impl Fn(Estimand) -> Option<f64>) -> Self {
        let mut rows = Vec::new();
        if let Some(g) = unadjusted_gap_percent {
            rows.push(SummaryRow::Unadjusted { gap_percent: g });
        }
        let mut ests: Vec<&EffectEstimate> = estimates.iter().collect();
        ests.sort_by_key(|e| order_key(e.method));
        for e in ests {
            rows.push(SummaryRow::Estimate { estimate: e.clone(), truth: truth(e.estimand) });
        }
        SummaryTable { rows }
    }

    /// Full-precision CSV; percent columns are derived from the beta columns on output.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,estimand,beta,se,ci_lo,ci_hi,gap_percent,gap_ci_lo_percent,gap_ci_hi_percent,truth,within_2se_of_truth\n",
        );
        for row in &self.rows {
            match row {
                SummaryRow::Unadjusted { gap_percent } => {
                    out.push_str(&format!("UNADJUSTED,,,,,,{gap_percent},,,,\n"));
                }
                SummaryRow::Estimate { estimate: e, truth } => {
                    let (glo, ghi) = gap_ci_percent(e.ci);
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{}\n",
                        e.method,
                        e.estimand,
                        e.beta,
                        e.se,
                        e.ci.0,
                        e.ci.1,
                        beta_to_gap_percent(e.beta),
                        glo,
                        ghi,
                        truth.map(|t| t.to_string()).unwrap_or_default(),
                        row.within_2se().map(|b| b.to_string()).unwrap_or_default()
                    ));
                }
            }
        }
        out
    }

    /// Human-readable table with percents rounded to two decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<13} {:<11} {:>9} {:>21} {:>8} {:>17}\n", "method", "estimand", "beta", "95% CI", "gap %", "gap 95% CI");
        for row in &self.rows {
            match row {
                SummaryRow::Unadjusted { gap_percent } => {
                    out.push_str(&format!("{:<13} {:<11} {:>9} {:>21} {:>8.2} {:>17}\n", "UNADJUSTED", "", "", "", gap_percent, ""));
                }
                SummaryRow::Estimate { estimate: e, .. } => {
                    let (glo, ghi) = gap_ci_percent(e.ci);
                    out.push_str(&format!(
                        "{:<13} {:<11} {:>9.4} {:>21} {:>8.2} {:>17}\n",
                        e.method.label(),
                        e.estimand.label(),
                        e.beta,
                        format!("[{:.4}, {:.4}]", e.ci.0, e.ci.1),
                        beta_to_gap_percent(e.beta),
                        format!("[{glo:.2}, {ghi:.2}]")
                    ));
                }
            }
        }
        out
    }
}

/// Intermediate estimate store shared between pipeline stages.
pub fn estimates_to_csv(estimates: &[EffectEstimate]) -> String {
    let mut out = String::from("method,estimand,beta,se,n_used\n");
    for e in estimates {
        out.push_str(&format!("{},{},{},{},{}\n", e.method, e.estimand, e.beta, e.se, e.n_used));
    }
    out
}

pub fn estimates_from_csv(text: &str) -> Result<Vec<EffectEstimate>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| Error::invalid(format!("estimates: bad {what} in {:?}", rec.iter().collect::<Vec<_>>()));
        let method = Method::parse(rec.get(0).unwrap_or("")).ok_or_else(|| bad("method"))?;
        let estimand = Estimand::parse(rec.get(1).unwrap_or("")).ok_or_else(|| bad("estimand"))?;
        let num = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok());
        let beta = num(2).ok_or_else(|| bad("beta"))?;
        let se = num(3).ok_or_else(|| bad("se"))?;
        let n_used = rec.get(4).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad("n_used"))?;
        out.push(EffectEstimate::new(method, estimand, beta, se, n_used));
    }
    Ok(out)
}
