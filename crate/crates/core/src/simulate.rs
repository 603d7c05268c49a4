//! Seeded synthetic data with known treatment effects.
//!
//! Covariates follow the causal ordering working years -> productivity ->
//! title, with institution class and department drawn independently; all of
//! them drive both treatment assignment and the outcome. Treatment is
//! `Bernoulli(expit(score(x)))` and the log10 outcome is
//! `baseline(x) + tau(x) * z + N(0, noise_sd)`.
//!
//! Randomness comes from ChaCha20 seeded with `seed`, with one stream per
//! quantity (see [`Stream`]) so every draw is independent of the order in
//! which the others are made.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{productivity_log_of, Dataset, Department, Field, Title, UniversityClass, UnitRecord};
use crate::error::{Error, Result};
use crate::estimation::expit;

/// RNG stream ids; each quantity draws from its own stream of the seeded generator.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Years = 1,
    Productivity = 2,
    TitleNoise = 3,
    UniversityClass = 4,
    Department = 5,
    Profile = 6,
    Treatment = 7,
    OutcomeNoise = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Linear function of the covariates, used for both the treatment score (logit scale)
/// and the outcome baseline (log10 scale).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearIndex {
    pub intercept: f64,
    pub title: [f64; 3],
    pub university_class: [f64; 3],
    pub department: [f64; 6],
    pub working_years: f64,
    pub productivity: f64,
    pub title_years: [f64; 3],
    /// Indexed `[class][department]`, multiplied by productivity.
    pub cell_productivity: [[f64; 6]; 3],
}

impl LinearIndex {
    pub fn eval(&self, title: Title, class: UniversityClass, dept: Department, years: f64, prod: f64) -> f64 {
        self.intercept
            + self.title[title.index()]
            + self.university_class[class.index()]
            + self.department[dept.index()]
            + self.working_years * years
            + self.productivity * prod
            + self.title_years[title.index()] * years
            + self.cell_productivity[class.index()][dept.index()] * prod
    }
}

/// Treatment effect on the log10 outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    Constant { tau: f64 },
    /// `below` when the covariate is at or under `threshold`, `above` otherwise.
    Step { field: Field, threshold: f64, below: f64, above: f64 },
    /// `at_half + slope * (e(x) - 0.5)` with `e` the true treatment probability.
    ScoreLinear { at_half: f64, slope: f64 },
    /// `intercept + slope * working_years`.
    LinearYears { intercept: f64, slope: f64 },
    /// `base`, shifted by `shift` inside one department.
    DepartmentShift { base: f64, department: Department, shift: f64 },
}

impl Effect {
    fn eval(&self, years: f64, prod: f64, dept: Department, score: f64) -> f64 {
        match *self {
            Effect::Constant { tau } => tau,
            Effect::Step { field, threshold, below, above } => {
                let v = if field == Field::WorkingYears { years } else { prod };
                if v > threshold {
                    above
                } else {
                    below
                }
            }
            Effect::ScoreLinear { at_half, slope } => at_half + slope * (score - 0.5),
            Effect::LinearYears { intercept, slope } => intercept + slope * years,
            Effect::DepartmentShift { base, department, shift } => {
                if dept == department {
                    base + shift
                } else {
                    base
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
    pub class_probs: [f64; 3],
    pub department_probs: [f64; 6],
    /// Working years ~ round(Gamma(shape, scale)).
    pub years_shape: f64,
    pub years_scale: f64,
    /// log10(count + 1) ~ N(mean + years_slope * (years - years_center), sd) before rounding the count.
    pub productivity_mean: f64,
    pub productivity_years_slope: f64,
    pub productivity_sd: f64,
    pub years_center: f64,
    /// Title from `years + weight * productivity + N(0, noise)` cut at two points.
    pub title_cutpoints: [f64; 2],
    pub title_productivity_weight: f64,
    pub title_noise_sd: f64,
    /// Probability of an observed productivity profile; missing profiles leave productivity null.
    pub profile_rate: f64,
    pub score: LinearIndex,
    pub baseline: LinearIndex,
    pub effect: Effect,
    pub noise_sd: f64,
}

impl DgpSpec {
    /// Confounded instance with a constant effect of -0.03 (about a 6.7% gap).
    ///
    /// The outcome baseline lies in the span of the interaction outcome design
    /// and the score in the span of the default propensity design, so both
    /// parametric models are correctly specified.
    pub fn canonical(n: usize, seed: u64) -> Self {
        let dept_score = [0.25, -0.30, 0.35, -0.25, 0.25, -0.60];
        let class_score = [0.10, 0.0, -0.10];
        let mut cell_score = [[0.0; 6]; 3];
        for (c, row) in cell_score.iter_mut().enumerate() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = dept_score[d] + class_score[c] - 0.30;
            }
        }
        DgpSpec {
            n,
            seed,
            class_probs: [0.14, 0.386, 0.474],
            department_probs: [0.181, 0.065, 0.272, 0.163, 0.166, 0.153],
            years_shape: 2.2,
            years_scale: 6.6,
            productivity_mean: 1.36,
            productivity_years_slope: 0.015,
            productivity_sd: 0.42,
            years_center: 14.6,
            title_cutpoints: [10.0, 18.0],
            title_productivity_weight: 2.0,
            title_noise_sd: 4.0,
            profile_rate: 1.0,
            score: LinearIndex {
                intercept: 0.55,
                title_years: [-0.01, -0.02, -0.03],
                cell_productivity: cell_score,
                ..Default::default()
            },
            baseline: LinearIndex {
                intercept: 5.044,
                title_years: [-0.0087, -0.0027, 0.0025],
                cell_productivity: [
                    [-0.0937, 0.0140, -0.0141, -0.0646, -0.0698, -0.0568],
                    [-0.0776, 0.0817, 0.0667, -0.0507, -0.0555, -0.0072],
                    [-0.0484, 0.1815, 0.1418, 0.0376, 0.0388, 0.0404],
                ],
                ..Default::default()
            },
            effect: Effect::Constant { tau: -0.03 },
            noise_sd: 0.08,
        }
    }

    /// Canonical covariates and outcome with treatment assigned by a fair coin.
    pub fn randomized(n: usize, seed: u64) -> Self {
        DgpSpec { score: LinearIndex::default(), ..Self::canonical(n, seed) }
    }

    pub fn with_effect(mut self, effect: Effect) -> Self {
        self.effect = effect;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sums_to_one = |p: &[f64]| p.iter().all(|v| *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if self.n < 10 {
            return Err(Error::DegenerateSpec(format!("n = {} is below 10", self.n)));
        }
        if !sums_to_one(&self.class_probs) || !sums_to_one(&self.department_probs) {
            return Err(Error::DegenerateSpec("level probabilities must be nonnegative and sum to 1".into()));
        }
        if !(self.noise_sd >= 0.0) || !(self.productivity_sd >= 0.0) || !(self.title_noise_sd >= 0.0) {
            return Err(Error::DegenerateSpec("standard deviations must be nonnegative".into()));
        }
        if !(self.years_shape > 0.0 && self.years_scale > 0.0) {
            return Err(Error::DegenerateSpec("working-years gamma parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.profile_rate) {
            return Err(Error::DegenerateSpec("profile_rate must lie in [0, 1]".into()));
        }
        if let Effect::Step { field, .. } = self.effect {
            if !matches!(field, Field::WorkingYears | Field::ProductivityLog) {
                return Err(Error::DegenerateSpec("step effects apply to working_years or productivity_log".into()));
            }
        }
        Ok(())
    }
}

/// Known quantities for a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Mean of `tau(x_i)` over the sample.
    pub ate: f64,
    /// `sum e_i tau_i / sum e_i` with the true scores.
    pub att: f64,
    /// `sum e_i (1 - e_i) tau_i / sum e_i (1 - e_i)`.
    pub overlap_ate: f64,
    pub tau: Vec<f64>,
    pub scores: Vec<f64>,
}

fn draw_level(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn generate(spec: &DgpSpec) -> Result<(Dataset, Truth)> {
    spec.validate()?;
    let n = spec.n;
    let mut years_rng = stream_rng(spec.seed, Stream::Years);
    let mut prod_rng = stream_rng(spec.seed, Stream::Productivity);
    let mut title_rng = stream_rng(spec.seed, Stream::TitleNoise);
    let mut class_rng = stream_rng(spec.seed, Stream::UniversityClass);
    let mut dept_rng = stream_rng(spec.seed, Stream::Department);
    let mut profile_rng = stream_rng(spec.seed, Stream::Profile);
    let mut treat_rng = stream_rng(spec.seed, Stream::Treatment);
    let mut noise_rng = stream_rng(spec.seed, Stream::OutcomeNoise);

    let gamma = Gamma::new(spec.years_shape, spec.years_scale).map_err(|e| Error::DegenerateSpec(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut records = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut prods = Vec::with_capacity(n);
    for _ in 0..n {
        let years = gamma.sample(&mut years_rng).round();
        let latent = spec.productivity_mean
            + spec.productivity_years_slope * (years - spec.years_center)
            + spec.productivity_sd * std_normal.sample(&mut prod_rng);
        let count = (10f64.powf(latent) - 1.0).round().max(0.0);
        let prod = productivity_log_of(count);
        let title_latent = years + spec.title_productivity_weight * prod + spec.title_noise_sd * std_normal.sample(&mut title_rng);
        let title = if title_latent < spec.title_cutpoints[0] {
            Title::Assistant
        } else if title_latent < spec.title_cutpoints[1] {
            Title::Associate
        } else {
            Title::Full
        };
        let class = UniversityClass::LEVELS[draw_level(class_rng.random(), &spec.class_probs)];
        let dept = Department::LEVELS[draw_level(dept_rng.random(), &spec.department_probs)];
        let has_profile = profile_rng.random::<f64>() < spec.profile_rate;

        let e = expit(spec.score.eval(title, class, dept, years, prod));
        scores.push(e);
        tau.push(spec.effect.eval(years, prod, dept, e));
        baseline.push(spec.baseline.eval(title, class, dept, years, prod));
        prods.push(prod);
        records.push(UnitRecord {
            salary: 0.0,
            treated: false,
            title,
            university_class: class,
            department: dept,
            working_years: years,
            productivity_raw: has_profile.then_some(count),
            has_profile,
        });
    }

    let expected_treated: f64 = scores.iter().sum();
    if expected_treated < 1.0 || expected_treated > n as f64 - 1.0 {
        return Err(Error::DegenerateSpec(format!("expected treated count {expected_treated:.2} of {n}")));
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.treated = treat_rng.random::<f64>() < scores[i];
        let z = if r.treated { 1.0 } else { 0.0 };
        let y = baseline[i] + tau[i] * z + spec.noise_sd * std_normal.sample(&mut noise_rng);
        r.salary = (10f64.powf(y) * 100.0).round() / 100.0;
    }
    let nt = records.iter().filter(|r| r.treated).count();
    if nt == 0 || nt == n {
        return Err(Error::DegenerateSpec(format!("realized sample has a single arm ({nt} treated of {n})")));
    }

    let weighted = |w: &dyn Fn(f64) -> f64| -> f64 {
        let num: f64 = scores.iter().zip(&tau).map(|(&e, &t)| w(e) * t).sum();
        let den: f64 = scores.iter().map(|&e| w(e)).sum();
        num / den
    };
    let truth = Truth {
        ate: tau.iter().sum::<f64>() / n as f64,
        att: weighted(&|e| e),
        overlap_ate: weighted(&|e| e * (1.0 - e)),
        tau,
        scores,
    };
    Ok((Dataset::new(records)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = generate(&DgpSpec::canonical(200, 11)).unwrap();
        let b = generate(&DgpSpec::canonical(200, 11)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate(&DgpSpec::canonical(200, 12)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_effect_has_zero_truth() {
        let (_, t) = generate(&DgpSpec::canonical(100, 1).with_effect(Effect::Constant { tau: 0.0 })).unwrap();
        assert_eq!(t.ate, 0.0);
    }

    #[test]
    fn randomized_estimands_coincide() {
        let spec = DgpSpec::randomized(500, 5).with_effect(Effect::LinearYears { intercept: -0.01, slope: -0.001 });
        let (d, t) = generate(&spec).unwrap();
        let brute: f64 = d.records().iter().map(|r| -0.01 - 0.001 * r.working_years).sum::<f64>() / d.len() as f64;
        assert!((t.ate - brute).abs() < 1e-12);
        assert!((t.att - t.ate).abs() < 1e-12);
        assert!((t.overlap_ate - t.ate).abs() < 1e-12);
    }

    #[test]
    fn per_unit_tau_matches_effect() {
        let effect = Effect::Step { field: Field::ProductivityLog, threshold: 1.36, below: -0.02, above: -0.05 };
        let (d, t) = generate(&DgpSpec::canonical(300, 2).with_effect(effect)).unwrap();
        assert_eq!(t.tau.len(), d.len());
        for (i, &ti) in t.tau.iter().enumerate() {
            let p = d.productivity_log()[i].unwrap();
            assert_eq!(ti, if p > 1.36 { -0.05 } else { -0.02 });
        }
    }

    #[test]
    fn degenerate_score_rejected() {
        let mut spec = DgpSpec::canonical(50, 1);
        spec.score = LinearIndex { intercept: -60.0, ..Default::default() };
        assert!(matches!(generate(&spec), Err(Error::DegenerateSpec(_))));
        let mut bad = DgpSpec::canonical(50, 1);
        bad.class_probs = [0.5, 0.5, 0.5];
        assert!(bad.validate().is_err());
        assert!(generate(&DgpSpec::canonical(5, 1)).is_err());
    }

    #[test]
    fn canonical_shape_is_plausible() {
        let (d, _) = generate(&DgpSpec::canonical(4000, 3)).unwrap();
        let share = d.n_treated() as f64 / d.len() as f64;
        assert!((0.3..0.6).contains(&share), "treated share {share}");
        let mean_salary = d.records().iter().map(|r| r.salary).sum::<f64>() / d.len() as f64;
        assert!((80_000.0..200_000.0).contains(&mean_salary), "mean salary {mean_salary}");
        assert!(d.records().iter().all(|r| r.salary > 27_000.0));
    }

    #[test]
    fn missing_profiles_leave_productivity_null() {
        let mut spec = DgpSpec::canonical(400, 8);
        spec.profile_rate = 0.5;
        let (d, _) = generate(&spec).unwrap();
        let missing = d.productivity_log().iter().filter(|p| p.is_none()).count();
        assert!(missing > 100 && missing < 300);
        assert!(d.records().iter().all(|r| r.has_profile == r.productivity_raw.is_some()));
    }
}
