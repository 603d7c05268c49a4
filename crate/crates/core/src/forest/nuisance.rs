use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::design::{build_design, Formula};
use crate::error::{Error, Result};
use crate::estimation::{expit, fit_logistic, fit_ols, LogisticOptions, OlsOptions};

/// Clamp applied to cross-fitted propensities before score arithmetic.
pub const E_HAT_CLAMP: f64 = 1e-3;

/// Out-of-fold outcome and propensity predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub m_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub fold_assignment: Vec<usize>,
    /// Zero when the nuisances were supplied rather than cross-fitted.
    pub fold_count: usize,
}

impl NuisanceFit {
    /// Wraps externally supplied nuisance values (e.g. known truths).
    pub fn supplied(m_hat: Vec<f64>, e_hat: Vec<f64>) -> Result<Self> {
        if m_hat.len() != e_hat.len() {
            return Err(Error::invalid("m_hat and e_hat differ in length"));
        }
        let e_hat = e_hat.into_iter().map(|e| e.clamp(E_HAT_CLAMP, 1.0 - E_HAT_CLAMP)).collect();
        Ok(NuisanceFit { fold_assignment: vec![0; m_hat.len()], m_hat, e_hat, fold_count: 0 })
    }

    pub fn len(&self) -> usize {
        self.m_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_hat.is_empty()
    }

    pub fn y_tilde(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.m_hat).map(|(y, m)| y - m).collect()
    }

    pub fn z_tilde(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.e_hat).map(|(z, e)| z - e).collect()
    }
}

/// Fold ids in `0..k`, dealt round-robin within each arm after a seeded shuffle.
pub fn stratified_folds(treated: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; treated.len()];
    for arm in [true, false] {
        let mut idx: Vec<usize> = (0..treated.len()).filter(|&i| treated[i] == arm).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            folds[i] = r % k;
        }
    }
    folds
}

/// Cross-fitted nuisances: OLS of the log outcome on `outcome_spec` (treatment
/// excluded) and logistic regression of treatment on `ps_spec`.
pub fn fit_nuisances(d: &Dataset, outcome_spec: &Formula, ps_spec: &Formula, folds: usize, seed: u64) -> Result<NuisanceFit> {
    if folds < 2 {
        return Err(Error::invalid(format!("cross-fitting needs at least 2 folds, got {folds}")));
    }
    d.ensure_estimable()?;
    let treated = d.treated_mask();
    let assignment = stratified_folds(&treated, folds, seed);
    for k in 0..folds {
        let members = || (0..d.len()).filter(|&i| assignment[i] == k);
        let t = members().filter(|&i| treated[i]).count();
        if t == 0 || t == members().count() {
            return Err(Error::SingleArmFold(k));
        }
    }
    let xm = build_design(d, outcome_spec)?;
    let xe = build_design(d, ps_spec)?;
    let y = d.outcome_log();
    let z = d.treatment();

    let per_fold: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..folds)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let train: Vec<usize> = (0..d.len()).filter(|&i| assignment[i] != k).collect();
            let test: Vec<usize> = (0..d.len()).filter(|&i| assignment[i] == k).collect();
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let ztr: Vec<f64> = train.iter().map(|&i| z[i]).collect();
            let om = fit_ols(&xm.select_rows(&train), &ytr, &OlsOptions::default()).map_err(|e| Error::in_stage(&format!("outcome nuisance fold {k}"), e))?;
            let pm = fit_logistic(&xe.select_rows(&train), &ztr, &LogisticOptions::default()).map_err(|e| Error::in_stage(&format!("propensity nuisance fold {k}"), e))?;
            let m = om.predict(&xm.values.select_rows(&test));
            let e = pm.linear_predictor(&xe.values.select_rows(&test)).into_iter().map(expit).collect();
            Ok((test, m, e))
        })
        .collect::<Result<_>>()?;

    let mut m_hat = vec![0.0; d.len()];
    let mut e_hat = vec![0.0; d.len()];
    for (test, m, e) in per_fold {
        for (j, &i) in test.iter().enumerate() {
            m_hat[i] = m[j];
            e_hat[i] = f64::clamp(e[j], E_HAT_CLAMP, 1.0 - E_HAT_CLAMP);
        }
    }
    Ok(NuisanceFit { m_hat, e_hat, fold_assignment: assignment, fold_count: folds })
}
