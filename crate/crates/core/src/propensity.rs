//! Propensity model fitting and positivity diagnostics.

use serde::Serialize;

use crate::data::Dataset;
use crate::design::{build_design, default_ps_spec, Formula};
use crate::error::{Error, Result};
use crate::estimation::{fit_logistic, logit, LogisticFit, LogisticOptions};

/// Bins for the overlap histograms on [0, 1].
pub const OVERLAP_BINS: usize = 40;

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub model: LogisticFit,
    /// Clamped treatment probabilities, one per dataset row.
    pub scores: Vec<f64>,
    pub logit_scores: Vec<f64>,
    pub spec_label: String,
    pub treated: Vec<bool>,
}

impl PropensityFit {
    /// Builds a fit from externally supplied scores (already inside (0, 1)).
    pub fn from_scores(scores: Vec<f64>, treated: Vec<bool>, spec_label: impl Into<String>) -> Result<Self> {
        if scores.len() != treated.len() {
            return Err(Error::invalid("scores and treatment differ in length"));
        }
        if scores.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::invalid("scores must lie strictly inside (0, 1)"));
        }
        let logit_scores = scores.iter().map(|&s| logit(s)).collect();
        let model = LogisticFit {
            labels: vec![],
            coefficients: vec![],
            fitted_probabilities: scores.clone(),
            converged: true,
            iterations: 0,
            pruned: vec![],
            max_score: 0.0,
        };
        Ok(PropensityFit { model, scores, logit_scores, spec_label: spec_label.into(), treated })
    }
}

pub fn estimate_propensity(d: &Dataset, spec: &Formula) -> Result<PropensityFit> {
    d.ensure_estimable()?;
    let x = build_design(d, spec)?;
    let model = fit_logistic(&x, &d.treatment(), &LogisticOptions::default())?;
    let scores = model.fitted_probabilities.clone();
    let logit_scores = scores.iter().map(|&s| logit(s)).collect();
    Ok(PropensityFit { model, scores, logit_scores, spec_label: spec.to_string(), treated: d.treated_mask() })
}

pub fn estimate_default_propensity(d: &Dataset) -> Result<PropensityFit> {
    estimate_propensity(d, &default_ps_spec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmOverlap {
    pub n: usize,
    pub min_score: f64,
    pub max_score: f64,
    pub outside_band: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub band: (f64, f64),
    pub bin_edges: Vec<f64>,
    pub treated: ArmOverlap,
    pub control: ArmOverlap,
    pub fail_fraction: f64,
    pub max_fail_fraction: f64,
    /// Warn-only flag: fraction outside the band is within the allowed maximum.
    pub pass: bool,
}

impl OverlapReport {
    pub fn outside_total(&self) -> usize {
        self.treated.outside_band + self.control.outside_band
    }

    /// Rows of `bin_lo,bin_hi,count_treated,count_control`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_treated,count_control\n");
        for b in 0..self.bin_edges.len() - 1 {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[b],
                self.bin_edges[b + 1],
                self.treated.counts[b],
                self.control.counts[b]
            ));
        }
        out
    }
}

fn bin_of(score: f64) -> usize {
    ((score * OVERLAP_BINS as f64).floor() as usize).min(OVERLAP_BINS - 1)
}

pub fn positivity_check(p: &PropensityFit, band: (f64, f64), max_fail_fraction: f64) -> Result<OverlapReport> {
    let (lo, hi) = band;
    if !(lo > 0.0 && hi < 1.0 && lo < hi) {
        return Err(Error::invalid(format!("overlap band ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    let arm = |treated: bool| -> ArmOverlap {
        let mut a = ArmOverlap { n: 0, min_score: f64::INFINITY, max_score: f64::NEG_INFINITY, outside_band: 0, counts: vec![0; OVERLAP_BINS] };
        for (&s, &t) in p.scores.iter().zip(&p.treated) {
            if t != treated {
                continue;
            }
            a.n += 1;
            a.min_score = a.min_score.min(s);
            a.max_score = a.max_score.max(s);
            if s < lo || s > hi {
                a.outside_band += 1;
            }
            a.counts[bin_of(s)] += 1;
        }
        a
    };
    let treated = arm(true);
    let control = arm(false);
    let total = (treated.n + control.n).max(1);
    let fail_fraction = (treated.outside_band + control.outside_band) as f64 / total as f64;
    let pass = fail_fraction <= max_fail_fraction;
    if !pass {
        log::warn!("positivity: {:.1}% of units have scores outside [{lo}, {hi}]", 100.0 * fail_fraction);
    }
    Ok(OverlapReport {
        band,
        bin_edges: (0..=OVERLAP_BINS).map(|b| b as f64 / OVERLAP_BINS as f64).collect(),
        treated,
        control,
        fail_fraction,
        max_fail_fraction,
        pass,
    })
}
