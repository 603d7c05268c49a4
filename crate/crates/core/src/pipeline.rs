//! Configured, staged analysis runs writing stamped artifacts to one directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{balance_table, love_plot_csv, love_plot_data, Adjustment};
use crate::data::{default_impute_keys, impute_group_mean, load_dataset, write_dataset, ColumnMap, Dataset, Field, ImputeScale, LoadReport};
use crate::design::{default_ps_spec, Formula};
use crate::error::{Error, Result};
use crate::estimators::{ate_iptw, ate_ps_adjust, att_psm, match_nn, ols_baseline, ols_interact, EffectEstimate, Estimand, MatchResult, PsmOptions};
use crate::forest::{group_summary_csv, ite_summary, CausalForest, ForestConfig, ForestHyper};
use crate::propensity::{estimate_propensity, positivity_check, PropensityFit};
use crate::report::{estimates_from_csv, estimates_to_csv, unadjusted_gap, SummaryTable};
use crate::sensitivity::{contour_data, sensitivity_analysis};
use crate::simulate::{generate, DgpSpec, Effect, Truth};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    Ingest,
    Impute,
    Ols,
    OlsInteract,
    Ps,
    Match,
    Iptw,
    PsAdjust,
    Balance,
    Forest,
    Sensitivity,
    Report,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 13] = [
        Stage::Simulate,
        Stage::Ingest,
        Stage::Impute,
        Stage::Ols,
        Stage::OlsInteract,
        Stage::Ps,
        Stage::Match,
        Stage::Iptw,
        Stage::PsAdjust,
        Stage::Balance,
        Stage::Forest,
        Stage::Sensitivity,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Impute => "impute",
            Stage::Ols => "ols",
            Stage::OlsInteract => "ols-interact",
            Stage::Ps => "ps",
            Stage::Match => "match",
            Stage::Iptw => "iptw",
            Stage::PsAdjust => "ps-adjust",
            Stage::Balance => "balance",
            Stage::Forest => "forest",
            Stage::Sensitivity => "sensitivity",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s.trim()).ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(Stage::parse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Stages to run; empty means the default set.
    pub stages: Vec<Stage>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 1, stages: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub salary_floor: f64,
    pub columns: ColumnMap,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig { path: None, salary_floor: 27000.0, columns: ColumnMap::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub profile_rate: Option<f64>,
    pub noise_sd: Option<f64>,
    pub effect: Option<Effect>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n: 4000, profile_rate: None, noise_sd: None, effect: None }
    }
}

impl SimulateConfig {
    pub fn spec(&self, seed: u64) -> DgpSpec {
        let mut s = DgpSpec::canonical(self.n, seed);
        if let Some(r) = self.profile_rate {
            s.profile_rate = r;
        }
        if let Some(v) = self.noise_sd {
            s.noise_sd = v;
        }
        if let Some(e) = &self.effect {
            s.effect = e.clone();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    pub keys: Vec<Field>,
    pub scale: ImputeScale,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig { keys: default_impute_keys(), scale: ImputeScale::Log }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Propensity formula, e.g. `university_class:department:productivity_log + title:working_years`.
    pub propensity: String,
    /// Covariate adjustment for the outcome regressions; treatment is added automatically.
    pub outcome: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = default_ps_spec().to_string();
        ModelConfig { propensity: f.clone(), outcome: f }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub band: (f64, f64),
    pub max_fail_fraction: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig { band: (0.05, 0.95), max_fail_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    /// Caliper in standard deviations of the logit score.
    pub caliper: f64,
    pub cluster_pairs: bool,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { caliper: 0.2, cluster_pairs: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IptwConfig {
    pub truncate_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub trees: usize,
    pub min_node_size: usize,
    pub subsample_fraction: f64,
    pub mtry: Option<usize>,
    pub tune_mtry: bool,
    pub honesty_fraction: f64,
    pub min_child_fraction: f64,
    pub folds: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
    pub include_has_profile: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        let h = ForestHyper::default();
        let c = ForestConfig::default();
        ForestSection {
            trees: h.num_trees,
            min_node_size: h.min_node_size,
            subsample_fraction: h.subsample_fraction,
            mtry: h.mtry,
            tune_mtry: h.tune_mtry,
            honesty_fraction: h.honesty_fraction,
            min_child_fraction: h.min_child_fraction,
            folds: c.folds,
            seed: None,
            include_has_profile: c.include_has_profile,
        }
    }
}

impl ForestSection {
    pub fn forest_config(&self, run_seed: u64) -> ForestConfig {
        ForestConfig {
            hyper: ForestHyper {
                num_trees: self.trees,
                min_node_size: self.min_node_size,
                subsample_fraction: self.subsample_fraction,
                mtry: self.mtry,
                tune_mtry: self.tune_mtry,
                honesty_fraction: self.honesty_fraction,
                min_child_fraction: self.min_child_fraction,
            },
            folds: self.folds,
            seed: self.seed.unwrap_or(run_seed),
            include_has_profile: self.include_has_profile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub alpha: f64,
    /// Contour points per axis.
    pub grid: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { alpha: 0.05, grid: 50 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunConfig,
    pub input: InputConfig,
    pub simulate: SimulateConfig,
    pub impute: ImputeConfig,
    pub model: ModelConfig,
    pub propensity: PropensityConfig,
    pub matching: MatchingConfig,
    pub iptw: IptwConfig,
    pub forest: ForestSection,
    pub sensitivity: SensitivityConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the re-serialized effective configuration.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Stages to run in execution order. Without an explicit list: everything,
    /// with `simulate` only when no input path is configured.
    pub fn effective_stages(&self) -> Vec<Stage> {
        let chosen: Vec<Stage> = if self.run.stages.is_empty() {
            Stage::ALL.into_iter().filter(|s| *s != Stage::Simulate || self.input.path.is_none()).collect()
        } else {
            self.run.stages.clone()
        };
        Stage::ALL.into_iter().filter(|s| chosen.contains(s)).collect()
    }

    fn propensity_formula(&self) -> Result<Formula> {
        self.model.propensity.parse()
    }

    fn outcome_formula(&self) -> Result<Formula> {
        self.model.outcome.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_sha256: String,
    pub stages: Vec<Stage>,
    pub artifacts: Vec<String>,
    pub summary: Option<SummaryTable>,
}

struct Run<'a> {
    cfg: &'a Config,
    out: PathBuf,
    stamp: String,
    artifacts: Vec<String>,
    dataset: Option<Dataset>,
    load_report: Option<LoadReport>,
    truth: Option<Truth>,
    propensity: Option<PropensityFit>,
    matches: Option<MatchResult>,
    estimates: Vec<EffectEstimate>,
    summary: Option<SummaryTable>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        fs::write(self.out.join(name), format!("# {}\n{body}", self.stamp))?;
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn dataset(&self) -> Result<&Dataset> {
        self.dataset.as_ref().ok_or_else(|| Error::invalid("no dataset loaded; add the ingest stage"))
    }

    fn ensure_propensity(&mut self) -> Result<()> {
        if self.propensity.is_none() {
            let p = estimate_propensity(self.dataset()?, &self.cfg.propensity_formula()?)?;
            self.propensity = Some(p);
        }
        Ok(())
    }

    fn ensure_matches(&mut self) -> Result<()> {
        self.ensure_propensity()?;
        if self.matches.is_none() {
            let m = match_nn(self.propensity.as_ref().expect("propensity fitted"), self.cfg.matching.caliper)?;
            self.matches = Some(m);
        }
        Ok(())
    }

    fn record(&mut self, e: EffectEstimate) -> Result<()> {
        self.estimates.retain(|x| x.method != e.method);
        self.estimates.push(e);
        let body = estimates_to_csv(&self.estimates);
        self.write("estimates.csv", &body)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let cfg = self.cfg;
        match stage {
            Stage::Simulate => {
                let (d, truth) = generate(&cfg.simulate.spec(cfg.run.seed))?;
                write_dataset(self.out.join("data.csv"), &d, &cfg.input.columns, std::slice::from_ref(&self.stamp))?;
                self.artifacts.push("data.csv".into());
                let json = serde_json::json!({
                    "config_sha256": self.stamp_hash(),
                    "seed": cfg.run.seed,
                    "ate": truth.ate,
                    "att": truth.att,
                    "overlap_ate": truth.overlap_ate,
                    "tau": truth.tau,
                });
                fs::write(self.out.join("truth.json"), serde_json::to_string_pretty(&json)? + "\n")?;
                self.artifacts.push("truth.json".into());
                self.truth = Some(truth);
                self.dataset = Some(d);
            }
            Stage::Ingest => {
                let path = match (&cfg.input.path, self.truth.is_some()) {
                    (_, true) => self.out.join("data.csv"),
                    (Some(p), false) => p.clone(),
                    (None, false) => return Err(Error::Config("no input.path configured and no simulate stage".into())),
                };
                let (d, report) = load_dataset(&path, &cfg.input.columns, cfg.input.salary_floor)?;
                self.write("load_report.txt", &report.to_text())?;
                self.dataset = Some(d);
                self.load_report = Some(report);
            }
            Stage::Impute => {
                let d = self.dataset()?;
                let missing = d.productivity_log().iter().filter(|v| v.is_none()).count();
                if missing > 0 {
                    let (filled, k) = impute_group_mean(d, &cfg.impute.keys, cfg.impute.scale)?;
                    self.dataset = Some(filled);
                    if let Some(r) = self.load_report.as_mut() {
                        r.imputed = k;
                    }
                }
                if let Some(r) = self.load_report.clone() {
                    self.write("load_report.txt", &r.to_text())?;
                }
            }
            Stage::Ols => {
                let (e, _) = ols_baseline(self.dataset()?)?;
                self.record(e)?;
            }
            Stage::OlsInteract => {
                let (e, _) = ols_interact(self.dataset()?, &cfg.outcome_formula()?)?;
                self.record(e)?;
            }
            Stage::Ps => {
                self.ensure_propensity()?;
                let p = self.propensity.as_ref().expect("propensity fitted");
                let r = positivity_check(p, cfg.propensity.band, cfg.propensity.max_fail_fraction)?;
                self.write("overlap_hist.csv", &r.histogram_csv())?;
            }
            Stage::Match => {
                self.ensure_matches()?;
                let m = self.matches.clone().expect("matched");
                self.write("matches.csv", &m.to_csv())?;
                let opts = PsmOptions { cluster_pairs: cfg.matching.cluster_pairs };
                let (e, _) = att_psm(self.dataset()?, &m, &cfg.outcome_formula()?, opts)?;
                self.record(e)?;
            }
            Stage::Iptw => {
                self.ensure_propensity()?;
                let p = self.propensity.as_ref().expect("propensity fitted");
                let (e, _) = ate_iptw(self.dataset()?, p, &cfg.outcome_formula()?, cfg.iptw.truncate_at)?;
                self.record(e)?;
            }
            Stage::PsAdjust => {
                self.ensure_propensity()?;
                let (e, _) = ate_ps_adjust(self.dataset()?, self.propensity.as_ref().expect("propensity fitted"))?;
                self.record(e)?;
            }
            Stage::Balance => {
                self.ensure_matches()?;
                let t = balance_table(self.dataset()?, Adjustment::Matched(self.matches.as_ref().expect("matched")))?;
                self.write("balance.csv", &t.to_csv())?;
                self.write("love_plot.csv", &love_plot_csv(&love_plot_data(&t)?))?;
            }
            Stage::Forest => {
                let d = self.dataset()?;
                let f = CausalForest::fit(d, &cfg.forest.forest_config(cfg.run.seed))?;
                let e = f.overlap_ate()?;
                let cate = f.predict_oob();
                let mut groups = String::from("covariate,group,mean_tau,n,smoothed\n");
                for by in [Field::WorkingYears, Field::ProductivityLog, Field::Title, Field::UniversityClass, Field::Department] {
                    let rows = ite_summary(&cate, d, by)?;
                    for line in group_summary_csv(&rows).lines().skip(1) {
                        groups.push_str(&format!("{},{line}\n", by.name()));
                    }
                }
                self.write("ite.csv", &cate.to_csv())?;
                self.write("ite_by_group.csv", &groups)?;
                self.record(e)?;
            }
            Stage::Sensitivity => {
                let r = sensitivity_analysis(self.dataset()?, &cfg.outcome_formula()?, cfg.sensitivity.alpha)?;
                let g = contour_data(r.estimate, r.se, r.dof, cfg.sensitivity.grid)?;
                self.write("contours.csv", &g.to_csv())?;
                self.write("sensitivity.txt", &r.to_text())?;
            }
            Stage::Report => {
                let path = self.out.join("estimates.csv");
                if !path.exists() {
                    return Err(Error::NoInputs);
                }
                let estimates = estimates_from_csv(&fs::read_to_string(&path)?)?;
                if estimates.is_empty() {
                    return Err(Error::NoInputs);
                }
                let gap = match &self.dataset {
                    Some(d) => {
                        let (mc, mt) = d.arm_salary_means()?;
                        Some(unadjusted_gap(mc, mt)?)
                    }
                    None => None,
                };
                let truth = self.truth.as_ref();
                let table = SummaryTable::build(gap, &estimates, |e| {
                    truth.map(|t| match e {
                        Estimand::Att => t.att,
                        Estimand::Ate => t.ate,
                        Estimand::OverlapAte => t.overlap_ate,
                    })
                });
                self.write("summary.csv", &table.to_csv())?;
                self.write("summary.txt", &table.to_text())?;
                self.summary = Some(table);
            }
        }
        Ok(())
    }

    fn stamp_hash(&self) -> String {
        self.stamp.split("config_sha256=").nth(1).and_then(|s| s.split(' ').next()).unwrap_or("").to_string()
    }
}

/// Runs the configured stages into `out_dir`. A failing stage aborts the run
/// with its name; artifacts of completed stages stay on disk.
pub fn run_pipeline(cfg: &Config, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    let out = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out)?;
    let hash = cfg.hash()?;
    let stages = cfg.effective_stages();
    let mut run = Run {
        cfg,
        out: out.clone(),
        stamp: format!("causalgap {VERSION} config_sha256={hash} seed={}", cfg.run.seed),
        artifacts: Vec::new(),
        dataset: None,
        load_report: None,
        truth: None,
        propensity: None,
        matches: None,
        estimates: Vec::new(),
        summary: None,
    };
    // A fresh estimator run starts a fresh estimate store.
    if stages.iter().any(|s| *s != Stage::Report) {
        let stale = out.join("estimates.csv");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    let mut result = Ok(());
    for &stage in &stages {
        log::info!("stage {}", stage.name());
        if let Err(e) = run.run_stage(stage) {
            result = Err(Error::in_stage(stage.name(), e));
            break;
        }
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        config_sha256: hash.clone(),
        seed: cfg.run.seed,
        stages: stages.iter().map(|s| s.name().to_string()).collect(),
        artifacts: run.artifacts.clone(),
        config: cfg.clone(),
    };
    fs::write(out.join("run_manifest.toml"), toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?)?;
    result?;
    Ok(RunSummary { out_dir: out, config_sha256: hash, stages, artifacts: run.artifacts, summary: run.summary })
}

#[derive(Serialize)]
struct Manifest {
    version: String,
    config_sha256: String,
    seed: u64,
    stages: Vec<String>,
    artifacts: Vec<String>,
    config: Config,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = Config::default();
        let back = Config::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn stages_follow_execution_order() {
        let c = Config::from_toml("[run]\nstages = [\"report\", \"ingest\", \"ols\"]\n").unwrap();
        assert_eq!(c.effective_stages(), vec![Stage::Ingest, Stage::Ols, Stage::Report]);
        assert_eq!(Stage::parse_list("ps,match").unwrap(), vec![Stage::Ps, Stage::Match]);
        assert!(Stage::parse("bogus").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[forest]\ntreez = 3\n").is_err());
    }

    #[test]
    fn simulate_is_default_without_input() {
        assert_eq!(Config::default().effective_stages()[0], Stage::Simulate);
        let c = Config::from_toml("[input]\npath = \"x.csv\"\n").unwrap();
        assert_eq!(c.effective_stages()[0], Stage::Ingest);
    }
}
