//! Regression, matching and weighting estimators of the treatment effect.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::design::{baseline_ols_spec, build_design, default_ps_spec, DesignMatrix, Formula, Matrix};
use crate::error::{Error, Result};
use crate::estimation::{fit_ols, OlsFit, OlsOptions, SeKind};
use crate::propensity::PropensityFit;
use crate::report::beta_to_gap_percent;

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Ols,
    OlsInteract,
    Psm,
    Iptw,
    PsAdjust,
    Forest,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ols, Method::OlsInteract, Method::Psm, Method::Iptw, Method::PsAdjust, Method::Forest];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::OlsInteract => "OLS_INTERACT",
            Method::Psm => "PSM",
            Method::Iptw => "IPTW",
            Method::PsAdjust => "PS_ADJUST",
            Method::Forest => "FOREST",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Estimand {
    Att,
    Ate,
    OverlapAte,
}

impl Estimand {
    pub fn label(self) -> &'static str {
        match self {
            Estimand::Att => "ATT",
            Estimand::Ate => "ATE",
            Estimand::OverlapAte => "OVERLAP_ATE",
        }
    }

    pub fn parse(s: &str) -> Option<Estimand> {
        [Estimand::Att, Estimand::Ate, Estimand::OverlapAte].into_iter().find(|e| e.label() == s)
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A point estimate on the log10-outcome scale with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub estimand: Estimand,
    pub beta: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub n_used: usize,
}

impl EffectEstimate {
    pub fn new(method: Method, estimand: Estimand, beta: f64, se: f64, n_used: usize) -> Self {
        EffectEstimate { method, estimand, beta, se, ci: (beta - Z_95 * se, beta + Z_95 * se), n_used }
    }

    /// Percent gap implied by `beta`; always recomputed.
    pub fn gap_percent(&self) -> f64 {
        beta_to_gap_percent(self.beta)
    }
}

const TREATMENT_COLUMN: usize = 1;

fn treatment_effect(method: Method, estimand: Estimand, fit: &OlsFit, n: usize) -> EffectEstimate {
    EffectEstimate::new(method, estimand, fit.coefficients[TREATMENT_COLUMN], fit.standard_errors[TREATMENT_COLUMN], n)
}

fn regress_with_treatment(d: &Dataset, spec: &Formula, weights: Option<&[f64]>, se: SeKind) -> Result<OlsFit> {
    let f = spec.with_treatment();
    if !f.intercept {
        return Err(Error::Formula("outcome formulas need an intercept".into()));
    }
    let x = build_design(d, &f)?;
    fit_ols(&x, d.outcome_log(), &OlsOptions { weights, se, protect: vec![TREATMENT_COLUMN] })
}

/// Main-effects benchmark regression.
pub fn ols_baseline(d: &Dataset) -> Result<(EffectEstimate, OlsFit)> {
    d.ensure_estimable()?;
    let fit = regress_with_treatment(d, &baseline_ols_spec(), None, SeKind::Classical)?;
    Ok((treatment_effect(Method::Ols, Estimand::Ate, &fit, d.len()), fit))
}

/// Full-sample regression with the propensity model's interaction structure.
pub fn ols_interact(d: &Dataset, outcome_spec: &Formula) -> Result<(EffectEstimate, OlsFit)> {
    d.ensure_estimable()?;
    let fit = regress_with_treatment(d, outcome_spec, None, SeKind::Classical)?;
    Ok((treatment_effect(Method::OlsInteract, Estimand::Ate, &fit, d.len()), fit))
}

/// Default outcome adjustment: the propensity interaction structure.
pub fn default_outcome_spec() -> Formula {
    default_ps_spec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(treated index, control index)` in treated dataset order.
    pub pairs: Vec<(usize, usize)>,
    /// `|logit(e_t) - logit(e_c)|` per pair.
    pub distances: Vec<f64>,
    pub control_multiplicity: BTreeMap<usize, usize>,
    pub unmatched_treated: usize,
    pub unmatched_control: usize,
    pub caliper_width: f64,
}

impl MatchResult {
    /// Per-row weights: 1 for matched treated units, multiplicity for used controls, 0 otherwise.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for &(t, _) in &self.pairs {
            w[t] = 1.0;
        }
        for (&c, &m) in &self.control_multiplicity {
            w[c] = m as f64;
        }
        w
    }

    /// Rows `treated_id,control_id,logit_distance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("treated_id,control_id,logit_distance\n");
        for (&(t, c), d) in self.pairs.iter().zip(&self.distances) {
            out.push_str(&format!("{t},{c},{d}\n"));
        }
        out
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// 1:1 nearest-neighbour matching on the logit score, with replacement, within
/// `caliper_mult` standard deviations of the full-sample logit scores.
pub fn match_nn(p: &PropensityFit, caliper_mult: f64) -> Result<MatchResult> {
    if p.logit_scores.len() < 2 {
        return Err(Error::SingleArm("fewer than two units".into()));
    }
    let sd = sample_sd(&p.logit_scores);
    if !(sd > 0.0) {
        return Err(Error::DegenerateScores);
    }
    match_on_logits(&p.logit_scores, &p.treated, caliper_mult * sd)
}

/// Matching with an explicit caliper width in logit units.
///
/// Treated units are processed in dataset order; among equidistant controls the
/// lowest index wins.
pub fn match_on_logits(logits: &[f64], treated: &[bool], caliper_width: f64) -> Result<MatchResult> {
    if logits.len() != treated.len() {
        return Err(Error::invalid("logits and treatment differ in length"));
    }
    let treated_idx: Vec<usize> = (0..logits.len()).filter(|&i| treated[i]).collect();
    let mut controls: Vec<(f64, usize)> = (0..logits.len()).filter(|&i| !treated[i]).map(|i| (logits[i], i)).collect();
    if treated_idx.is_empty() || controls.is_empty() {
        return Err(Error::SingleArm(format!("{} treated, {} controls", treated_idx.len(), controls.len())));
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // One entry per distinct score, carrying its lowest control index.
    let mut distinct: Vec<(f64, usize)> = Vec::with_capacity(controls.len());
    for (v, i) in controls {
        match distinct.last_mut() {
            Some(last) if last.0 == v => last.1 = last.1.min(i),
            _ => distinct.push((v, i)),
        }
    }

    let found: Vec<Option<(usize, f64)>> = treated_idx
        .par_iter()
        .map(|&t| {
            let lt = logits[t];
            let k = distinct.partition_point(|&(v, _)| v < lt);
            let mut best: Option<(usize, f64)> = None;
            for cand in [k.checked_sub(1), Some(k)].into_iter().flatten() {
                if let Some(&(v, idx)) = distinct.get(cand) {
                    let dist = (lt - v).abs();
                    best = match best {
                        None => Some((idx, dist)),
                        Some((bi, bd)) if dist < bd || (dist == bd && idx < bi) => Some((idx, dist)),
                        keep => keep,
                    };
                }
            }
            best.filter(|&(_, dist)| dist <= caliper_width)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut distances = Vec::new();
    let mut control_multiplicity = BTreeMap::new();
    for (&t, f) in treated_idx.iter().zip(&found) {
        if let Some((c, dist)) = *f {
            pairs.push((t, c));
            distances.push(dist);
            *control_multiplicity.entry(c).or_insert(0) += 1;
        }
    }
    let n_controls = treated.iter().filter(|t| !**t).count();
    Ok(MatchResult {
        unmatched_treated: treated_idx.len() - pairs.len(),
        unmatched_control: n_controls - control_multiplicity.len(),
        pairs,
        distances,
        control_multiplicity,
        caliper_width,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PsmOptions {
    /// Cluster standard errors on the matched control (pairs sharing a control form one cluster).
    pub cluster_pairs: bool,
}

/// Weighted regression on the matched sample: treated weight 1, controls weighted by reuse.
pub fn att_psm(d: &Dataset, m: &MatchResult, outcome_spec: &Formula, opts: PsmOptions) -> Result<(EffectEstimate, OlsFit)> {
    if m.pairs.is_empty() {
        return Err(Error::invalid("no matched pairs"));
    }
    let w_all = m.weights(d.len());
    let rows: Vec<usize> = (0..d.len()).filter(|&i| w_all[i] > 0.0).collect();
    let sub = d.select(&rows);
    let w: Vec<f64> = rows.iter().map(|&i| w_all[i]).collect();
    let se = if opts.cluster_pairs {
        let mut cluster = vec![0usize; d.len()];
        for &(t, c) in &m.pairs {
            cluster[t] = c;
            cluster[c] = c;
        }
        SeKind::Clustered(rows.iter().map(|&i| cluster[i]).collect())
    } else {
        SeKind::Classical
    };
    let fit = regress_with_treatment(&sub, outcome_spec, Some(&w), se)?;
    Ok((treatment_effect(Method::Psm, Estimand::Att, &fit, rows.len()), fit))
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `Z/e + (1-Z)/(1-e)`, optionally clipped to the `[1-q, q]` weight quantiles.
pub fn iptw_weights(p: &PropensityFit, truncate_at: Option<f64>) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = p
        .scores
        .iter()
        .zip(&p.treated)
        .map(|(&e, &t)| if t { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect();
    if let Some(q) = truncate_at {
        if !(0.5..1.0).contains(&q) {
            return Err(Error::invalid(format!("truncation quantile {q} must lie in [0.5, 1)")));
        }
        let mut sorted = w.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&sorted, 1.0 - q), quantile(&sorted, q));
        for v in &mut w {
            *v = v.clamp(lo, hi);
        }
    }
    Ok(w)
}

pub fn ate_iptw(d: &Dataset, p: &PropensityFit, outcome_spec: &Formula, truncate_at: Option<f64>) -> Result<(EffectEstimate, OlsFit)> {
    d.ensure_estimable()?;
    if p.scores.len() != d.len() {
        return Err(Error::invalid("propensity fit does not match dataset"));
    }
    let w = iptw_weights(p, truncate_at)?;
    let fit = regress_with_treatment(d, outcome_spec, Some(&w), SeKind::Classical)?;
    Ok((treatment_effect(Method::Iptw, Estimand::Ate, &fit, d.len()), fit))
}

/// Outcome on intercept, treatment and the estimated score.
pub fn ate_ps_adjust(d: &Dataset, p: &PropensityFit) -> Result<(EffectEstimate, OlsFit)> {
    d.ensure_estimable()?;
    if p.scores.len() != d.len() {
        return Err(Error::invalid("propensity fit does not match dataset"));
    }
    let values = Matrix::from_columns(&[vec![1.0; d.len()], d.treatment(), p.scores.clone()])?;
    let mut x = DesignMatrix::from_matrix(values, true);
    x.labels = vec!["(Intercept)".into(), "treatment".into(), "propensity_score".into()];
    let fit = fit_ols(&x, d.outcome_log(), &OlsOptions { protect: vec![TREATMENT_COLUMN], ..Default::default() })?;
    Ok((treatment_effect(Method::PsAdjust, Estimand::Ate, &fit, d.len()), fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Department, Title, UniversityClass, UnitRecord};

    fn record(salary: f64, treated: bool) -> UnitRecord {
        UnitRecord {
            salary,
            treated,
            title: Title::Full,
            university_class: UniversityClass::BM,
            department: Department::AH,
            working_years: 10.0,
            productivity_raw: Some(5.0),
            has_profile: true,
        }
    }

    #[test]
    fn nearest_control_wins() {
        let m = match_on_logits(&[0.5, 0.4, 0.9], &[true, false, false], 10.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.unmatched_control, 1);
    }

    #[test]
    fn caliper_excludes() {
        let m = match_on_logits(&[0.5, 2.0], &[true, false], 0.3).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_treated, 1);
    }

    #[test]
    fn ties_go_to_lower_index() {
        // Controls at 0.0 (index 3) and 1.0 (index 1) are equidistant from 0.5.
        let m = match_on_logits(&[0.5, 1.0, 7.0, 0.0], &[true, false, false, false], 10.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        let m = match_on_logits(&[0.5, 0.0, 1.0, 0.0], &[true, false, false, false], 10.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
    }

    #[test]
    fn reuse_is_counted() {
        let m = match_on_logits(&[0.1, 0.2, 0.15, 3.0], &[true, true, false, false], 1.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 2), (1, 2)]);
        assert_eq!(m.control_multiplicity.get(&2), Some(&2));
        assert_eq!(m.weights(4), vec![1.0, 1.0, 2.0, 0.0]);
        assert!(m.to_csv().starts_with("treated_id,control_id,logit_distance\n0,2,"));
    }

    #[test]
    fn zero_spread_is_degenerate() {
        let p = PropensityFit::from_scores(vec![0.5; 4], vec![true, false, true, false], "c").unwrap();
        assert!(matches!(match_nn(&p, 0.2), Err(Error::DegenerateScores)));
    }

    #[test]
    fn constant_shift_recovered_on_matched_sample() {
        // Outcomes on log10 scale: treated = control + 0.1.
        let base = [5.0, 5.2, 4.9];
        let mut recs = Vec::new();
        for b in base {
            recs.push(record(10f64.powf(b + 0.1), true));
            recs.push(record(10f64.powf(b), false));
        }
        let d = Dataset::new(recs).unwrap();
        let logits = vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let m = match_on_logits(&logits, &d.treated_mask(), 0.5).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 3), (4, 5)]);
        let (est, _) = att_psm(&d, &m, &Formula::intercept_only(), PsmOptions::default()).unwrap();
        assert!((est.beta - 0.1).abs() < 1e-10);
        assert_eq!(est.estimand, Estimand::Att);
        assert!((est.ci.1 - est.beta - Z_95 * est.se).abs() < 1e-15);
    }

    #[test]
    fn iptw_weight_formula() {
        let p = PropensityFit::from_scores(vec![0.25, 0.25], vec![true, false], "x").unwrap();
        let w = iptw_weights(&p, None).unwrap();
        assert_eq!(w[0], 4.0);
        assert!((w[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_caps_extremes() {
        let scores: Vec<f64> = (1..=99).map(|i| f64::from(i) / 100.0).collect();
        let treated: Vec<bool> = (0..99).map(|i| i % 2 == 0).collect();
        let p = PropensityFit::from_scores(scores, treated, "x").unwrap();
        let raw = iptw_weights(&p, None).unwrap();
        let cut = iptw_weights(&p, Some(0.9)).unwrap();
        let max_raw = raw.iter().cloned().fold(0.0, f64::max);
        let max_cut = cut.iter().cloned().fold(0.0, f64::max);
        assert!(max_cut < max_raw);
        assert!(iptw_weights(&p, Some(1.5)).is_err());
    }

    #[test]
    fn gap_percent_is_recomputed() {
        let e = EffectEstimate::new(Method::Iptw, Estimand::Ate, -0.0276, 0.004, 10);
        assert!((e.gap_percent() - 100.0 * (1.0 - 10f64.powf(-0.0276))).abs() < 1e-10);
        assert_eq!(Method::parse("PS_ADJUST"), Some(Method::PsAdjust));
        assert_eq!(Estimand::parse("OVERLAP_ATE"), Some(Estimand::OverlapAte));
    }
}
