//! Python bindings: datasets, the parametric estimators, the causal forest and the pipeline.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use causalgap::balance::{balance_table, Adjustment};
use causalgap::data::{impute_group_mean, load_dataset, write_dataset, ColumnMap, ImputeScale};
use causalgap::estimators::{self, default_outcome_spec, PsmOptions};
use causalgap::forest::{ForestConfig, ForestHyper};
use causalgap::pipeline::{self, Config};
use causalgap::propensity::estimate_default_propensity;
use causalgap::simulate::DgpSpec;

fn py_err(e: causalgap::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: causalgap::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a CSV in the default column schema, dropping salaries under `salary_floor`.
    #[staticmethod]
    #[pyo3(signature = (path, salary_floor = 27000.0))]
    fn load(path: &str, salary_floor: f64) -> PyResult<Self> {
        let (inner, _) = load_dataset(path, &ColumnMap::default(), salary_floor).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_dataset(path, &self.inner, &ColumnMap::default(), &[]).map_err(py_err)
    }

    /// Group-mean imputation of missing productivity by (title, department).
    fn impute(&self) -> PyResult<Self> {
        let (inner, _) = impute_group_mean(&self.inner, &causalgap::data::default_impute_keys(), ImputeScale::Log).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_treated(&self) -> usize {
        self.inner.n_treated()
    }

    #[getter]
    fn outcome_log(&self) -> Vec<f64> {
        self.inner.outcome_log().to_vec()
    }

    #[getter]
    fn treated(&self) -> Vec<bool> {
        self.inner.treated_mask()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, treated={})", self.inner.len(), self.inner.n_treated())
    }
}

#[pyclass(name = "EffectEstimate", frozen)]
struct PyEstimate {
    inner: causalgap::EffectEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.label()
    }
    #[getter]
    fn estimand(&self) -> &'static str {
        self.inner.estimand.label()
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn se(&self) -> f64 {
        self.inner.se
    }
    #[getter]
    fn ci(&self) -> (f64, f64) {
        self.inner.ci
    }
    #[getter]
    fn n_used(&self) -> usize {
        self.inner.n_used
    }
    #[getter]
    fn gap_percent(&self) -> f64 {
        self.inner.gap_percent()
    }

    fn __repr__(&self) -> String {
        format!("EffectEstimate({} {}: beta={:.5}, se={:.5})", self.method(), self.estimand(), self.inner.beta, self.inner.se)
    }
}

fn wrap(r: causalgap::Result<(causalgap::EffectEstimate, causalgap::estimation::OlsFit)>) -> PyResult<PyEstimate> {
    r.map(|(inner, _)| PyEstimate { inner }).map_err(py_err)
}

/// Synthetic confounded sample with a constant effect; returns the dataset and its true estimands.
#[pyfunction]
#[pyo3(signature = (n = 4000, seed = 1, tau = -0.03))]
fn simulate(n: usize, seed: u64, tau: f64) -> PyResult<(PyDataset, BTreeMap<String, f64>)> {
    let spec = DgpSpec::canonical(n, seed).with_effect(causalgap::simulate::Effect::Constant { tau });
    let (inner, t) = causalgap::generate(&spec).map_err(py_err)?;
    let truth = BTreeMap::from([("ate".to_string(), t.ate), ("att".to_string(), t.att), ("overlap_ate".to_string(), t.overlap_ate)]);
    Ok((PyDataset { inner }, truth))
}

#[pyfunction]
fn ols(d: &PyDataset) -> PyResult<PyEstimate> {
    wrap(estimators::ols_baseline(&d.inner))
}

#[pyfunction]
fn ols_interact(d: &PyDataset) -> PyResult<PyEstimate> {
    wrap(estimators::ols_interact(&d.inner, &default_outcome_spec()))
}

#[pyfunction]
#[pyo3(signature = (d, caliper = 0.2, cluster_pairs = false))]
fn psm(d: &PyDataset, caliper: f64, cluster_pairs: bool) -> PyResult<PyEstimate> {
    let p = estimate_default_propensity(&d.inner).map_err(py_err)?;
    let m = estimators::match_nn(&p, caliper).map_err(py_err)?;
    wrap(estimators::att_psm(&d.inner, &m, &default_outcome_spec(), PsmOptions { cluster_pairs }))
}

#[pyfunction]
#[pyo3(signature = (d, truncate_at = None))]
fn iptw(d: &PyDataset, truncate_at: Option<f64>) -> PyResult<PyEstimate> {
    let p = estimate_default_propensity(&d.inner).map_err(py_err)?;
    wrap(estimators::ate_iptw(&d.inner, &p, &default_outcome_spec(), truncate_at))
}

#[pyfunction]
fn ps_adjust(d: &PyDataset) -> PyResult<PyEstimate> {
    let p = estimate_default_propensity(&d.inner).map_err(py_err)?;
    wrap(estimators::ate_ps_adjust(&d.inner, &p))
}

/// Covariate balance before and after caliper matching: `{label: (smd_before, smd_after)}`.
#[pyfunction]
#[pyo3(signature = (d, caliper = 0.2))]
fn balance(d: &PyDataset, caliper: f64) -> PyResult<BTreeMap<String, (f64, f64)>> {
    let p = estimate_default_propensity(&d.inner).map_err(py_err)?;
    let m = estimators::match_nn(&p, caliper).map_err(py_err)?;
    let t = balance_table(&d.inner, Adjustment::Matched(&m)).map_err(py_err)?;
    Ok(t.rows.into_iter().map(|r| (r.label, (r.smd_before, r.smd_after))).collect())
}

/// Robustness values of the interaction regression's treatment coefficient.
#[pyfunction]
#[pyo3(signature = (d, alpha = 0.05))]
fn sensitivity(d: &PyDataset, alpha: f64) -> PyResult<BTreeMap<String, f64>> {
    let r = causalgap::sensitivity::sensitivity_analysis(&d.inner, &default_outcome_spec(), alpha).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("estimate".to_string(), r.estimate),
        ("se".to_string(), r.se),
        ("t_value".to_string(), r.t_value),
        ("partial_r2".to_string(), r.partial_r2_treatment),
        ("rv".to_string(), r.rv_point),
        ("rv_alpha".to_string(), r.rv_alpha),
    ]))
}

#[pyclass(name = "CausalForest", frozen)]
struct PyForest {
    inner: causalgap::forest::CausalForest,
}

#[pymethods]
impl PyForest {
    #[new]
    #[pyo3(signature = (d, num_trees = 3000, seed = 1, min_node_size = 5, tune_mtry = false))]
    fn new(py: Python<'_>, d: &PyDataset, num_trees: usize, seed: u64, min_node_size: usize, tune_mtry: bool) -> PyResult<Self> {
        let cfg = ForestConfig { hyper: ForestHyper { num_trees, min_node_size, tune_mtry, ..ForestHyper::default() }, seed, ..ForestConfig::default() };
        let data = d.inner.clone();
        let inner = py.detach(move || causalgap::forest::CausalForest::fit(&data, &cfg)).map_err(py_err)?;
        Ok(PyForest { inner })
    }

    #[getter]
    fn num_trees(&self) -> usize {
        self.inner.num_trees()
    }

    /// Out-of-bag CATE per training unit; `None` where the forest has no support.
    fn predict_oob(&self) -> Vec<Option<f64>> {
        self.inner.predict_oob().tau_hat.into_iter().map(|v| v.is_finite().then_some(v)).collect()
    }

    fn overlap_ate(&self) -> PyResult<PyEstimate> {
        self.inner.overlap_ate().map(|inner| PyEstimate { inner }).map_err(py_err)
    }
}

#[pyfunction]
fn beta_to_gap_percent(beta: f64) -> f64 {
    causalgap::beta_to_gap_percent(beta)
}

#[pyfunction]
fn unadjusted_gap(mean_control: f64, mean_treated: f64) -> PyResult<f64> {
    causalgap::unadjusted_gap(mean_control, mean_treated).map_err(py_err)
}

/// Runs the pipeline from a TOML string; returns the written artifact names.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config_toml: &str, out_dir: &str) -> PyResult<Vec<String>> {
    let cfg = Config::from_toml(config_toml).map_err(py_err)?;
    let out = out_dir.to_string();
    let s = py.detach(move || pipeline::run_pipeline(&cfg, out)).map_err(py_err)?;
    Ok(s.artifacts)
}

#[pymodule]
fn causalgap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(ols_interact, m)?)?;
    m.add_function(wrap_pyfunction!(psm, m)?)?;
    m.add_function(wrap_pyfunction!(iptw, m)?)?;
    m.add_function(wrap_pyfunction!(ps_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(balance, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(beta_to_gap_percent, m)?)?;
    m.add_function(wrap_pyfunction!(unadjusted_gap, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
