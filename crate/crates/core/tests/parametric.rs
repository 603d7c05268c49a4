mod common;

use causalgap::design::{build_design, default_ps_spec};
use causalgap::estimators::{ate_iptw, ate_ps_adjust, att_psm, default_outcome_spec, match_nn, PsmOptions};
use causalgap::propensity::{estimate_default_propensity, positivity_check};
use causalgap::simulate::{generate, DgpSpec, Effect, LinearIndex};
use common::*;

const SEEDS: std::ops::Range<u64> = 100..120;

/// Inverse Fisher information diagonal, by solving against unit vectors.
fn logistic_se(rows: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut info = vec![vec![0.0; k]; k];
    for (r, &pi) in rows.iter().zip(p) {
        let w = pi * (1.0 - pi);
        for a in 0..k {
            for b in 0..k {
                info[a][b] += w * r[a] * r[b];
            }
        }
    }
    (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            solve(info.clone(), e)[j].sqrt()
        })
        .collect()
}

#[test]
fn randomized_assignment_gives_null_propensity_coefficients() {
    let (mut inside, mut total) = (0, 0);
    for seed in SEEDS {
        let (d, _) = generate(&DgpSpec::randomized(4000, seed)).unwrap();
        let p = estimate_default_propensity(&d).unwrap();
        let x = build_design(&d, &default_ps_spec()).unwrap();
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.values.row(i).to_vec()).collect();
        let se = logistic_se(&rows, &p.scores);
        for j in 1..se.len() {
            total += 1;
            inside += usize::from(p.model.coefficients[j].abs() < 2.0 * se[j]);
        }
    }
    let share = inside as f64 / total as f64;
    assert!(share >= 0.9, "{inside}/{total}");
}

#[test]
fn confounded_scores_discriminate() {
    let (d, _) = generate(&DgpSpec::canonical(4000, 3)).unwrap();
    let p = estimate_default_propensity(&d).unwrap();
    // Mann-Whitney form of the AUC, counted pair by pair.
    let z = d.treated_mask();
    let (t, c): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| z[i]);
    let mut wins = 0.0;
    for &i in &t {
        for &j in &c {
            let (a, b) = (p.scores[i], p.scores[j]);
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    let auc = wins / (t.len() * c.len()) as f64;
    assert!(auc > 0.6, "auc {auc}");
}

#[test]
fn positivity_counts_match_a_recount() {
    let (d, _) = generate(&DgpSpec::canonical(4000, 5)).unwrap();
    let p = estimate_default_propensity(&d).unwrap();
    let r = positivity_check(&p, (0.05, 0.95), 0.1).unwrap();
    let outside = |arm: bool| (0..d.len()).filter(|&i| p.treated[i] == arm && !(0.05..=0.95).contains(&p.scores[i])).count();
    assert_eq!(r.treated.outside_band, outside(true));
    assert_eq!(r.control.outside_band, outside(false));
    assert_eq!(r.treated.counts.iter().sum::<usize>(), d.n_treated());
}

#[test]
fn psm_under_the_null() {
    let mut covered = 0;
    for seed in SEEDS {
        let (d, _) = generate(&DgpSpec::canonical(2000, seed).with_effect(Effect::Constant { tau: 0.0 })).unwrap();
        let p = estimate_default_propensity(&d).unwrap();
        let m = match_nn(&p, 0.2).unwrap();
        let (e, _) = att_psm(&d, &m, &default_outcome_spec(), PsmOptions::default()).unwrap();
        covered += usize::from(e.beta.abs() < 2.0 * e.se);
    }
    assert!(covered >= 18, "{covered}/20");
}

#[test]
fn ps_adjust_under_the_null() {
    let mut covered = 0;
    for seed in SEEDS {
        let (d, _) = generate(&DgpSpec::canonical(4000, seed).with_effect(Effect::Constant { tau: 0.0 })).unwrap();
        let (e, _) = ate_ps_adjust(&d, &estimate_default_propensity(&d).unwrap()).unwrap();
        covered += usize::from(e.beta.abs() < 2.0 * e.se);
    }
    assert!(covered >= 18, "{covered}/20");
}

#[test]
fn ps_adjust_recovers_when_confounding_runs_through_the_score() {
    let mut covered = 0;
    for seed in SEEDS {
        let base = DgpSpec::canonical(4000, seed);
        // Baseline is an affine function of the true score index.
        let s = &base.score;
        let k = 0.04;
        let mut cells = s.cell_productivity;
        cells.iter_mut().flatten().for_each(|v| *v *= k);
        let baseline = LinearIndex {
            intercept: 5.0 + k * s.intercept,
            title_years: s.title_years.map(|v| k * v),
            cell_productivity: cells,
            ..Default::default()
        };
        let (d, _) = generate(&DgpSpec { baseline, ..base }).unwrap();
        let (e, _) = ate_ps_adjust(&d, &estimate_default_propensity(&d).unwrap()).unwrap();
        covered += usize::from((e.beta + 0.03).abs() < 2.0 * e.se);
    }
    assert!(covered >= 18, "{covered}/20");
}

#[test]
fn iptw_recovers_the_constant_effect() {
    let mut covered = 0;
    for seed in SEEDS {
        let (d, _) = generate(&DgpSpec::canonical(4000, seed)).unwrap();
        let p = estimate_default_propensity(&d).unwrap();
        let (e, _) = ate_iptw(&d, &p, &default_outcome_spec(), None).unwrap();
        covered += usize::from((e.beta + 0.03).abs() < 2.0 * e.se);
    }
    assert!(covered >= 18, "{covered}/20");
}

#[test]
fn pair_clustered_psm_under_the_null() {
    let mut covered = 0;
    for seed in SEEDS {
        let (d, _) = generate(&DgpSpec::canonical(2000, seed).with_effect(Effect::Constant { tau: 0.0 })).unwrap();
        let p = estimate_default_propensity(&d).unwrap();
        let m = match_nn(&p, 0.2).unwrap();
        let (e, _) = att_psm(&d, &m, &default_outcome_spec(), PsmOptions { cluster_pairs: true }).unwrap();
        covered += usize::from(e.beta.abs() < 2.0 * e.se);
    }
    assert!(covered >= 18, "{covered}/20");
}
