//! Honest, orthogonalized causal forest with an overlap-weighted doubly robust ATE.

mod nuisance;
mod tree;

pub use nuisance::{fit_nuisances, stratified_folds, NuisanceFit, E_HAT_CLAMP};
pub use tree::{GrowInputs, HonestTree, Leaf, Node, TreeParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{factor_levels, Dataset, Field};
use crate::design::{default_ps_spec, Formula, Term};
use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, Estimand, Method};

/// Prediction denominators below this mark a point as lacking support.
pub const MIN_DENOMINATOR: f64 = 1e-10;
/// Equal-count bins for continuous covariates in `ite_summary`.
pub const ITE_BINS: usize = 20;
/// Centered moving-average window over those bins.
pub const SMOOTH_WINDOW: usize = 3;
/// Trees per candidate forest when tuning `mtry`.
const TUNE_TREES: usize = 200;

/// Column-major covariates used for splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// 0/1 columns take a single fixed split.
    pub binary: Vec<bool>,
    pub n: usize,
}

impl FeatureMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("feature columns are ragged or unnamed"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        let binary = columns.iter().map(|c| c.iter().all(|&v| v == 0.0 || v == 1.0)).collect();
        Ok(FeatureMatrix { names, columns, binary, n })
    }

    /// Title, class and department indicators, working years and log productivity,
    /// optionally followed by the profile flag.
    pub fn from_dataset(d: &Dataset, include_has_profile: bool) -> Result<Self> {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for field in [Field::Title, Field::UniversityClass, Field::Department] {
            for (k, level) in factor_levels(field).iter().enumerate() {
                names.push(format!("{}[{}]", field.name(), level));
                columns.push((0..d.len()).map(|i| if d.level(field, i) == Some(k) { 1.0 } else { 0.0 }).collect());
            }
        }
        names.push(Field::WorkingYears.name().into());
        columns.push(d.records().iter().map(|r| r.working_years).collect());
        names.push(Field::ProductivityLog.name().into());
        columns.push(d.productivity_complete()?);
        if include_has_profile {
            names.push(Field::HasProfile.name().into());
            columns.push(d.records().iter().map(|r| f64::from(u8::from(r.has_profile))).collect());
        }
        FeatureMatrix::from_columns(names, columns)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestHyper {
    pub num_trees: usize,
    pub min_node_size: usize,
    pub subsample_fraction: f64,
    /// Candidate columns per split; `None` means `ceil(p/3)`.
    pub mtry: Option<usize>,
    /// Choose `mtry` from `{ceil(p/3), ceil(p/2), p}` by out-of-bag R-loss.
    pub tune_mtry: bool,
    pub honesty_fraction: f64,
    /// Smallest share of a node's structure units either child may receive.
    pub min_child_fraction: f64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            num_trees: 3000,
            min_node_size: 5,
            subsample_fraction: 0.5,
            mtry: None,
            tune_mtry: false,
            honesty_fraction: 0.5,
            min_child_fraction: 0.05,
        }
    }
}

impl ForestHyper {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::invalid("num_trees must be positive"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::invalid("subsample_fraction must lie in (0, 1]"));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(Error::invalid("honesty_fraction must lie in (0, 1)"));
        }
        if !(0.0..0.5).contains(&self.min_child_fraction) {
            return Err(Error::invalid("min_child_fraction must lie in [0, 0.5)"));
        }
        if self.mtry == Some(0) {
            return Err(Error::invalid("mtry must be positive"));
        }
        Ok(())
    }

    pub fn params(&self, p: usize) -> TreeParams {
        TreeParams {
            min_node_size: self.min_node_size,
            subsample_fraction: self.subsample_fraction,
            honesty_fraction: self.honesty_fraction,
            mtry: self.mtry.unwrap_or(p.div_ceil(3)).min(p).max(1),
            min_child_fraction: self.min_child_fraction,
        }
    }
}

/// Seed of tree `t`, a SplitMix64 mix of the master seed and the index.
pub fn tree_seed(master_seed: u64, t: usize) -> u64 {
    let mut z = master_seed.wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CateSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub n_defined: usize,
}

/// Per-point CATE predictions; `NaN` where the forest has no support.
#[derive(Debug, Clone, PartialEq)]
pub struct CateVector {
    pub tau_hat: Vec<f64>,
    pub summary: CateSummary,
}

impl CateVector {
    pub fn new(tau_hat: Vec<f64>) -> Self {
        let defined: Vec<f64> = tau_hat.iter().copied().filter(|v| v.is_finite()).collect();
        let n = defined.len();
        let mean = defined.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { f64::NAN };
        let summary = CateSummary {
            mean,
            sd,
            min: defined.iter().copied().fold(f64::INFINITY, f64::min),
            max: defined.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n_defined: n,
        };
        CateVector { tau_hat, summary }
    }

    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.tau_hat[i].is_finite()
    }

    /// Rows `unit_id,tau_hat`; undefined predictions are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit_id,tau_hat\n");
        for (i, t) in self.tau_hat.iter().enumerate() {
            if t.is_finite() {
                out.push_str(&format!("{i},{t}\n"));
            } else {
                out.push_str(&format!("{i},\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CausalForest {
    pub trees: Vec<HonestTree>,
    pub hyper: ForestHyper,
    pub nuisance: NuisanceFit,
    pub master_seed: u64,
    pub x: FeatureMatrix,
    pub y_tilde: Vec<f64>,
    pub z_tilde: Vec<f64>,
}

fn grow_trees(x: &FeatureMatrix, yz: &[f64], zz: &[f64], treated: &[bool], params: &TreeParams, num_trees: usize, master_seed: u64) -> Vec<HonestTree> {
    let inp = GrowInputs { x, yz, zz, treated };
    (0..num_trees).into_par_iter().map(|t| HonestTree::grow(&inp, params, tree_seed(master_seed, t))).collect()
}

/// Sums leaf moments over trees in index order so results do not depend on scheduling.
fn ratio_over<'a>(leaves: impl Iterator<Item = &'a Leaf>) -> f64 {
    let (mut num, mut den, mut k) = (0.0, 0.0, 0usize);
    for leaf in leaves {
        if !leaf.units.is_empty() {
            num += leaf.mean_yz;
            den += leaf.mean_zz;
            k += 1;
        }
    }
    finish_ratio(num, den, k)
}

fn finish_ratio(num: f64, den: f64, k: usize) -> f64 {
    if k == 0 || den / (k as f64) < MIN_DENOMINATOR {
        f64::NAN
    } else {
        num / den
    }
}

/// Units per work chunk when routing training units through every tree.
const CHUNK: usize = 256;

/// Out-of-bag CATE for every training unit. Work is split over units; each unit
/// visits trees in index order, so sums are identical for any thread count.
fn oob_tau(trees: &[HonestTree], x: &FeatureMatrix) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..x.n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let units = c * CHUNK..((c + 1) * CHUNK).min(x.n);
            let m = units.len();
            let (mut num, mut den, mut k) = (vec![0.0; m], vec![0.0; m], vec![0usize; m]);
            for t in trees {
                for (j, i) in units.clone().enumerate() {
                    if t.in_subsample(i) {
                        continue;
                    }
                    let leaf = t.leaf_for_unit(x, i);
                    if !leaf.units.is_empty() {
                        num[j] += leaf.mean_yz;
                        den[j] += leaf.mean_zz;
                        k[j] += 1;
                    }
                }
            }
            (0..m).map(|j| finish_ratio(num[j], den[j], k[j])).collect()
        })
        .collect();
    chunks.concat()
}

fn oob_r_loss(trees: &[HonestTree], x: &FeatureMatrix, y_tilde: &[f64], z_tilde: &[f64]) -> f64 {
    oob_tau(trees, x)
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_finite())
        .map(|(i, t)| (y_tilde[i] - t * z_tilde[i]).powi(2))
        .sum()
}

/// Grows a forest on supplied nuisances.
pub fn grow_forest(x: &FeatureMatrix, y: &[f64], treated: &[bool], nuisance: &NuisanceFit, hyper: &ForestHyper, master_seed: u64) -> Result<CausalForest> {
    hyper.validate()?;
    let n = x.n;
    if y.len() != n || treated.len() != n || nuisance.len() != n {
        return Err(Error::invalid("forest inputs differ in length"));
    }
    let z: Vec<f64> = treated.iter().map(|&t| f64::from(u8::from(t))).collect();
    let y_tilde = nuisance.y_tilde(y);
    let z_tilde = nuisance.z_tilde(&z);
    let yz: Vec<f64> = y_tilde.iter().zip(&z_tilde).map(|(a, b)| a * b).collect();
    let zz: Vec<f64> = z_tilde.iter().map(|b| b * b).collect();
    let p = x.ncols();

    let mut hyper = *hyper;
    if hyper.tune_mtry && p > 0 {
        let mut grid = vec![p.div_ceil(3).max(1), p.div_ceil(2), p];
        grid.dedup();
        let mut best: Option<(usize, f64)> = None;
        for m in grid {
            let params = TreeParams { mtry: m, ..hyper.params(p) };
            let trees = grow_trees(x, &yz, &zz, treated, &params, hyper.num_trees.min(TUNE_TREES), master_seed);
            let loss = oob_r_loss(&trees, x, &y_tilde, &z_tilde);
            log::info!("forest tuning: mtry {m} oob loss {loss:.6e}");
            if best.is_none_or(|(_, l)| loss < l) {
                best = Some((m, loss));
            }
        }
        hyper.mtry = best.map(|(m, _)| m);
        hyper.tune_mtry = false;
    }
    let params = hyper.params(p);
    hyper.mtry = Some(params.mtry);
    let trees = grow_trees(x, &yz, &zz, treated, &params, hyper.num_trees, master_seed);
    Ok(CausalForest { trees, hyper, nuisance: nuisance.clone(), master_seed, x: x.clone(), y_tilde, z_tilde })
}

/// Settings for fitting nuisances and forest from a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub hyper: ForestHyper,
    pub folds: usize,
    pub seed: u64,
    /// Adds the profile flag to the outcome nuisance and the split covariates.
    pub include_has_profile: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { hyper: ForestHyper::default(), folds: 5, seed: 1, include_has_profile: false }
    }
}

/// Outcome nuisance formula: the propensity structure, plus the profile flag when asked.
pub fn outcome_nuisance_spec(include_has_profile: bool) -> Formula {
    let f = default_ps_spec();
    if include_has_profile {
        f.with_term(Term::new(vec![Field::HasProfile]))
    } else {
        f
    }
}

impl CausalForest {
    pub fn fit(d: &Dataset, cfg: &ForestConfig) -> Result<CausalForest> {
        let nuisance = fit_nuisances(d, &outcome_nuisance_spec(cfg.include_has_profile), &default_ps_spec(), cfg.folds, cfg.seed ^ 0x5EED_F01D)?;
        let x = FeatureMatrix::from_dataset(d, cfg.include_has_profile)?;
        grow_forest(&x, d.outcome_log(), &d.treated_mask(), &nuisance, &cfg.hyper, cfg.seed)
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// CATE at new covariate rows, using every tree.
    pub fn predict_cate(&self, points: &FeatureMatrix) -> Result<CateVector> {
        if points.ncols() != self.x.ncols() {
            return Err(Error::invalid(format!("{} feature columns, forest expects {}", points.ncols(), self.x.ncols())));
        }
        let tau = (0..points.n)
            .into_par_iter()
            .map(|i| {
                let row = points.row(i);
                ratio_over(self.trees.iter().map(|t| t.leaf_for(&row)))
            })
            .collect();
        Ok(CateVector::new(tau))
    }

    /// Out-of-bag CATE for the training units: each unit only sees trees that did not draw it.
    pub fn predict_oob(&self) -> CateVector {
        CateVector::new(oob_tau(&self.trees, &self.x))
    }

    /// Forest weights over training units at a covariate row; sums to one where defined.
    pub fn forest_weights(&self, row: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.x.n];
        let leaves: Vec<&Leaf> = self.trees.iter().map(|t| t.leaf_for(row)).filter(|l| !l.units.is_empty()).collect();
        let k = leaves.len() as f64;
        for leaf in leaves {
            let share = 1.0 / (k * leaf.units.len() as f64);
            for &u in &leaf.units {
                w[u as usize] += share;
            }
        }
        w
    }

    /// Overlap-weighted doubly robust ATE from out-of-bag CATEs.
    pub fn overlap_ate(&self) -> Result<EffectEstimate> {
        let oob = self.predict_oob();
        let mut tau = oob.tau_hat;
        let missing: Vec<usize> = (0..tau.len()).filter(|&i| !tau[i].is_finite()).collect();
        if !missing.is_empty() {
            log::warn!("forest: {} units have no out-of-bag trees; using all trees for them", missing.len());
            for i in missing {
                tau[i] = ratio_over(self.trees.iter().map(|t| t.leaf_for_unit(&self.x, i)));
            }
        }
        overlap_ate_from_scores(&tau, &self.y_tilde, &self.z_tilde, &self.nuisance.e_hat)
    }
}

/// `Γ = τ + (Z−ê)/(ê(1−ê))·(Y−m̂−(Z−ê)τ)`, averaged with weights `ê(1−ê)`.
/// Units with undefined `τ` are dropped.
pub fn overlap_ate_from_scores(tau: &[f64], y_tilde: &[f64], z_tilde: &[f64], e_hat: &[f64]) -> Result<EffectEstimate> {
    let n = tau.len();
    if y_tilde.len() != n || z_tilde.len() != n || e_hat.len() != n {
        return Err(Error::invalid("score inputs differ in length"));
    }
    let mut w = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        if !tau[i].is_finite() {
            continue;
        }
        let e = e_hat[i].clamp(E_HAT_CLAMP, 1.0 - E_HAT_CLAMP);
        let v = e * (1.0 - e);
        w.push(v);
        gamma.push(tau[i] + z_tilde[i] / v * (y_tilde[i] - z_tilde[i] * tau[i]));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 1e-12) {
        return Err(Error::NoOverlap);
    }
    let est = w.iter().zip(&gamma).map(|(a, g)| a * g).sum::<f64>() / sw;
    let var = w.iter().zip(&gamma).map(|(a, g)| a * a * (g - est) * (g - est)).sum::<f64>() / (sw * sw);
    Ok(EffectEstimate::new(Method::Forest, Estimand::OverlapAte, est, var.sqrt(), w.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub mean_tau: f64,
    pub n: usize,
    /// Centered moving average for binned continuous covariates; the group mean otherwise.
    pub smoothed: f64,
}

/// Mean CATE by factor level, or by equal-count bins of a continuous covariate.
pub fn ite_summary(c: &CateVector, d: &Dataset, by: Field) -> Result<Vec<GroupSummary>> {
    if c.len() != d.len() {
        return Err(Error::invalid("CATE vector does not match dataset"));
    }
    let defined: Vec<usize> = (0..d.len()).filter(|&i| c.is_defined(i)).collect();
    let mean_of = |units: &[usize]| units.iter().map(|&i| c.tau_hat[i]).sum::<f64>() / units.len() as f64;
    if by.is_factor() || matches!(by, Field::Treatment | Field::HasProfile) {
        let labels: Vec<String> = if by.is_factor() {
            factor_levels(by).iter().map(|s| s.to_string()).collect()
        } else {
            vec!["0".into(), "1".into()]
        };
        let mut out = Vec::new();
        for (k, label) in labels.into_iter().enumerate() {
            let units: Vec<usize> = defined
                .iter()
                .copied()
                .filter(|&i| match d.level(by, i) {
                    Some(l) => l == k,
                    None => d.numeric(by, i).map(|v| v as usize == k).unwrap_or(false),
                })
                .collect();
            if units.is_empty() {
                log::info!("ite summary: group {}={} is empty; omitted", by.name(), label);
                continue;
            }
            let m = mean_of(&units);
            out.push(GroupSummary { group: format!("{}={}", by.name(), label), mean_tau: m, n: units.len(), smoothed: m });
        }
        return Ok(out);
    }
    let mut keyed: Vec<(f64, usize)> = defined.iter().map(|&i| d.numeric(by, i).map(|v| (v, i))).collect::<Result<_>>()?;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = keyed.len();
    let mut out = Vec::new();
    for b in 0..ITE_BINS {
        let chunk = &keyed[b * m / ITE_BINS..(b + 1) * m / ITE_BINS];
        if chunk.is_empty() {
            continue;
        }
        let units: Vec<usize> = chunk.iter().map(|&(_, i)| i).collect();
        let mt = mean_of(&units);
        out.push(GroupSummary { group: format!("{}..{}", chunk[0].0, chunk[chunk.len() - 1].0), mean_tau: mt, n: units.len(), smoothed: mt });
    }
    let means: Vec<f64> = out.iter().map(|g| g.mean_tau).collect();
    let half = SMOOTH_WINDOW / 2;
    for (k, g) in out.iter_mut().enumerate() {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(means.len() - 1);
        g.smoothed = means[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    }
    Ok(out)
}

pub fn group_summary_csv(rows: &[GroupSummary]) -> String {
    let mut out = String::from("group,mean_tau,n,smoothed\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.group, r.mean_tau, r.n, r.smoothed));
    }
    out
}
