//! Python bindings: cohort generation and I/O, the harm index, the trial
//! estimators, counterfactual bounds, the decision-model check and the CLI.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use triage_core::cohort::{self, ChildRecord, CohortConfig};
use triage_core::counterfactual::{self, DecisionData, DecisionRule};
use triage_core::index::{IndexSpec, IndexVariant, OutcomeMatrix, Window};
use triage_core::inference::{self, PowerInputs};
use triage_core::model::{self, ModelParams};
use triage_core::{io, Error};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config { .. } | Error::Domain(_) => PyValueError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Deserialize a Rust value from Python keyword arguments via JSON.
fn from_kwargs<T: serde::de::DeserializeOwned>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let text: String = match kwargs {
        Some(k) => py.import("json")?.call_method1("dumps", (k,))?.extract()?,
        None => "{}".into(),
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_object<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A generated or loaded cohort, one record per child.
#[pyclass(module = "triage")]
struct Cohort {
    records: Vec<ChildRecord>,
}

#[pymethods]
impl Cohort {
    fn __len__(&self) -> usize {
        self.records.len()
    }

    /// Numeric columns as a dict of lists.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let f = triage_core::frame::Frame::from_records(&self.records);
        let d = PyDict::new(py);
        for name in f.names() {
            d.set_item(name, PyList::new(py, f.get(name).map_err(to_py)?)?)?;
        }
        Ok(d)
    }

    fn record<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyAny>> {
        let r = self
            .records
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("record {i} out of range")))?;
        to_object(py, r)
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        io::write_cohort_csv(&path, &self.records, &[]).map_err(to_py)
    }

    fn to_jsonl(&self, path: PathBuf) -> PyResult<()> {
        io::write_cohort_jsonl(&path, &self.records).map_err(to_py)
    }

    fn score_auc(&self) -> PyResult<f64> {
        cohort::score_auc(&self.records).map_err(to_py)
    }

    fn cronbach_alpha(&self) -> PyResult<f64> {
        let m = OutcomeMatrix::from_records(&self.records, Window::Main).map_err(to_py)?;
        triage_core::index::cronbach_alpha(&m).map_err(to_py)
    }

    /// Harm index values for one variant and outcome window.
    #[pyo3(signature = (variant="equal", window="main"))]
    fn harm_index(&self, variant: &str, window: &str) -> PyResult<Vec<f64>> {
        let w: Window = window.parse().map_err(to_py)?;
        let v: IndexVariant = variant.parse().map_err(to_py)?;
        let m = OutcomeMatrix::from_records(&self.records, w).map_err(to_py)?;
        Ok(triage_core::index::harm_index(&m, &IndexSpec::new(v)).map_err(to_py)?.values)
    }

    /// Intent-to-treat estimate on an analysis column (`harm`, `top1`, or an outcome name).
    #[pyo3(signature = (outcome="harm", variant="equal", window="main", n_perm=0, seed=1))]
    fn itt<'py>(
        &self,
        py: Python<'py>,
        outcome: &str,
        variant: &str,
        window: &str,
        n_perm: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = IndexSpec::new(variant.parse().map_err(to_py)?);
        let d = inference::prepare(&self.records, &spec, window.parse().map_err(to_py)?).map_err(to_py)?;
        let mut r = inference::itt(&d.frame, outcome).map_err(to_py)?;
        if n_perm > 0 {
            let s = inference::itt_spec(&d.frame, outcome);
            let p = inference::permutation_test(&d.frame, &s, &inference::PermutationOptions::new(n_perm, seed))
                .map_err(to_py)?;
            r.permutation_p = Some(p.p_value);
        }
        to_object(py, &r)
    }

    /// Best-case harm bounds under a screening rule on the control arm.
    #[pyo3(signature = (rule="algo_only", rate=0.30, threshold=20.0, r_grid="0:4:41", seed=1))]
    fn bound_curve<'py>(
        &self,
        py: Python<'py>,
        rule: &str,
        rate: f64,
        threshold: f64,
        r_grid: &str,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let d = inference::prepare(&self.records, &IndexSpec::default(), Window::Main).map_err(to_py)?;
        let rule = DecisionRule::parse(rule, rate, threshold).map_err(to_py)?;
        let data = DecisionData::from_frame(&d.frame).map_err(to_py)?.arm(false);
        let grid = counterfactual::parse_grid(r_grid).map_err(to_py)?;
        let c = counterfactual::bound_curves(&data, &[rule], &grid, d.index.floor, seed).map_err(to_py)?;
        to_object(py, &c)
    }
}

/// Generate a cohort; keyword arguments override configuration fields.
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn generate_cohort(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Cohort> {
    let cfg: CohortConfig = from_kwargs(py, kwargs)?;
    let records = py.detach(|| cohort::generate_cohort(&cfg)).map_err(to_py)?;
    Ok(Cohort { records })
}

#[pyfunction]
fn read_cohort(path: PathBuf) -> PyResult<Cohort> {
    Ok(Cohort {
        records: io::read_cohort(&path).map_err(to_py)?,
    })
}

/// Monte Carlo check of the decision model; keyword arguments are model parameters.
#[pyfunction]
#[pyo3(signature = (n_per_arm=100_000, seed=1, **kwargs))]
fn verify_propositions<'py>(
    py: Python<'py>,
    n_per_arm: usize,
    seed: u64,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let params: ModelParams = from_kwargs(py, kwargs)?;
    let r = py.detach(|| model::verify_propositions(&params, n_per_arm, seed)).map_err(to_py)?;
    to_object(py, &r)
}

#[pyfunction]
fn iv_wald(itt: f64, first_stage: f64) -> PyResult<f64> {
    inference::iv_wald(itt, first_stage).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (mean_c, mean_t, sd, clusters_per_arm, cluster_size, icc, cv, alpha))]
#[allow(clippy::too_many_arguments)]
fn power_calc(
    mean_c: f64,
    mean_t: f64,
    sd: f64,
    clusters_per_arm: f64,
    cluster_size: f64,
    icc: f64,
    cv: f64,
    alpha: f64,
) -> PyResult<f64> {
    inference::power_calc(&PowerInputs {
        mean_c,
        mean_t,
        sd,
        clusters_per_arm,
        cluster_size,
        icc,
        cv,
        alpha,
    })
    .map_err(to_py)
}

#[pyfunction]
fn mvpf<'py>(
    py: Python<'py>,
    children_prevented: f64,
    public_cost_per_child: f64,
    implementation_cost: f64,
    annual_maintenance: f64,
    horizon_years: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = counterfactual::mvpf(
        children_prevented,
        public_cost_per_child,
        implementation_cost,
        annual_maintenance,
        horizon_years,
    )
    .map_err(to_py)?;
    to_object(py, &r)
}

/// Run the command-line tool with the given arguments; returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("triage".to_string()).chain(args).collect();
    py.detach(|| triage_core::cli::run(argv))
}

#[pymodule]
fn triage(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_function(wrap_pyfunction!(generate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(read_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(verify_propositions, m)?)?;
    m.add_function(wrap_pyfunction!(iv_wald, m)?)?;
    m.add_function(wrap_pyfunction!(power_calc, m)?)?;
    m.add_function(wrap_pyfunction!(mvpf, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
