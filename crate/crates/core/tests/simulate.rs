mod common;

use causalgap::simulate::{generate, DgpSpec, Effect};
use common::*;

#[test]
fn difference_in_means_is_unbiased_under_randomization() {
    let mut covered = 0;
    let mut errors = Vec::new();
    for seed in 0..50u64 {
        let (d, truth) = generate(&DgpSpec::randomized(2000, seed)).unwrap();
        let y = d.outcome_log();
        let z = d.treated_mask();
        let arm = |a: bool| -> Vec<f64> { (0..d.len()).filter(|&i| z[i] == a).map(|i| y[i]).collect() };
        let (t, c) = (arm(true), arm(false));
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let diff = mean(&t) - mean(&c);
        let se = (var(&t) / t.len() as f64 + var(&c) / c.len() as f64).sqrt();
        covered += usize::from((diff - truth.ate).abs() < 2.0 * se);
        errors.push(diff - truth.ate);
    }
    assert!(covered >= 44, "{covered}/50");
    assert!(mean(&errors).abs() < 0.002, "{}", mean(&errors));
}

#[test]
fn truth_weights_match_direct_averages() {
    let spec = DgpSpec::canonical(3000, 4).with_effect(Effect::ScoreLinear { at_half: -0.03, slope: -0.2 });
    let (_, t) = generate(&spec).unwrap();
    let w_avg = |w: &dyn Fn(f64) -> f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for (e, tau) in t.scores.iter().zip(&t.tau) {
            a += w(*e) * tau;
            b += w(*e);
        }
        a / b
    };
    assert!((t.ate - mean(&t.tau)).abs() < 1e-15);
    assert!((t.att - w_avg(&|e| e)).abs() < 1e-15);
    assert!((t.overlap_ate - w_avg(&|e| e * (1.0 - e))).abs() < 1e-15);
    // Effects fall with the score, so the treated population has the larger gap.
    assert!(t.att < t.ate);
    for (e, tau) in t.scores.iter().zip(&t.tau) {
        assert!((tau - (-0.03 - 0.2 * (e - 0.5))).abs() < 1e-15);
    }
}

#[test]
fn canonical_arms_are_confounded() {
    let (d, t) = generate(&DgpSpec::canonical(4000, 1)).unwrap();
    let share = d.n_treated() as f64 / d.len() as f64;
    assert!((0.2..0.6).contains(&share), "{share}");
    assert!(t.scores.iter().any(|e| *e < 0.3) && t.scores.iter().any(|e| *e > 0.6));
    assert!(t.tau.iter().all(|v| *v == -0.03));
}
