//! Python bindings for the ancova-sizer core library.
//!
//! Scalar helpers return native floats and ints. Structured results
//! (plans, fits, recalculation audits, simulation summaries) are
//! serialized through serde and handed back as plain Python dicts and
//! lists, so no wrapper classes leak into the Python side.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ancova_sizer::ancova::TrialDataset;
use ancova_sizer::design::{self, Allocation, CompoundSymmetrySpec, DesignSpec, JointCovariance};
use ancova_sizer::mc::ScenarioSpec;
use ancova_sizer::recalc::{InterimData, RecalcConfig};
use ancova_sizer::sizing::{self, SizingMethod};
use ancova_sizer::{distributions, Error};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serialize through JSON and parse with Python's json module. Slower
/// than building objects by hand but immune to pyo3 API churn, and the
/// payloads here are tiny.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    let json = py.import("json")?;
    json.call_method1("loads", (text,))
}

fn design_from_args(
    delta: f64,
    gamma: &str,
    alpha: f64,
    power: f64,
    c: usize,
) -> Result<DesignSpec, Error> {
    if !(power > 0.0 && power < 1.0) {
        return Err(Error::Domain(format!(
            "power must be in (0, 1), got {power}"
        )));
    }
    let allocation = Allocation::parse(gamma)?;
    DesignSpec::new(delta, allocation, alpha, 1.0 - power, c)
}

fn method_from_name(name: &str) -> Result<SizingMethod, Error> {
    match name {
        "basic" => Ok(SizingMethod::Basic),
        "z" => Ok(SizingMethod::ZCorrected),
        "df" => Ok(SizingMethod::DfCorrected),
        "z-df" => Ok(SizingMethod::ZDfCorrected),
        other => Err(Error::Domain(format!(
            "unknown sizing method {other:?}; expected basic, z, df, or z-df"
        ))),
    }
}

/// Quantile of the standard normal distribution.
#[pyfunction]
fn std_normal_quantile(p: f64) -> PyResult<f64> {
    distributions::std_normal_quantile(p).map_err(value_err)
}

/// CDF of Student's t distribution with `df` degrees of freedom.
#[pyfunction]
fn t_cdf(x: f64, df: f64) -> PyResult<f64> {
    distributions::t_cdf(x, df).map_err(value_err)
}

/// Quantile of Student's t distribution with `df` degrees of freedom.
#[pyfunction]
fn t_quantile(p: f64, df: f64) -> PyResult<f64> {
    distributions::t_quantile(p, df).map_err(value_err)
}

/// Population multiple correlation implied by a joint covariance
/// specification. Not clamped to [0, 1]: an inconsistent specification
/// shows up as an out-of-range value.
#[pyfunction]
fn r_squared(sigma_y_sq: f64, sigma_yz: Vec<f64>, sigma_z: Vec<Vec<f64>>) -> PyResult<f64> {
    let cov = JointCovariance::from_rows(sigma_y_sq, sigma_yz, sigma_z).map_err(value_err)?;
    design::r_squared_from_covariance(&cov).map_err(value_err)
}

/// Full feasibility report for a covariance specification, as a dict
/// with eigenvalues, the implied R^2, problem messages, and the overall
/// verdict under `is_feasible`.
#[pyfunction]
fn check_feasibility<'py>(
    py: Python<'py>,
    sigma_y_sq: f64,
    sigma_yz: Vec<f64>,
    sigma_z: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cov = JointCovariance::from_rows(sigma_y_sq, sigma_yz, sigma_z).map_err(value_err)?;
    let report = design::check_feasibility(&cov);
    let mut value = serde_json::to_value(&report).map_err(value_err)?;
    value["is_feasible"] = serde_json::Value::Bool(report.is_feasible());
    to_py(py, &value)
}

/// Eigenvalues of a joint compound-symmetry covariance over the
/// outcome and `c` covariates, as (value, multiplicity) pairs.
#[pyfunction]
fn cs_eigenvalues(sigma_sq: f64, rho: f64, c: usize) -> PyResult<Vec<(f64, usize)>> {
    let spec = CompoundSymmetrySpec::new(sigma_sq, rho, c).map_err(value_err)?;
    Ok(design::cs_eigenvalues(&spec).to_vec())
}

/// Sample sizes from all four approximation formulas, as a list of
/// dicts ordered basic, z-corrected, df-corrected, z-and-df-corrected.
#[pyfunction]
#[pyo3(signature = (delta, sigma_y_sq, r_squared, c, alpha = 0.05, power = 0.8, gamma = "1:1"))]
#[allow(clippy::too_many_arguments)]
fn plan<'py>(
    py: Python<'py>,
    delta: f64,
    sigma_y_sq: f64,
    r_squared: f64,
    c: usize,
    alpha: f64,
    power: f64,
    gamma: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let design = design_from_args(delta, gamma, alpha, power, c).map_err(value_err)?;
    let plans = sizing::plan_all(&design, sigma_y_sq, r_squared).map_err(value_err)?;
    to_py(py, &plans)
}

/// Total sample size for one sizing method. `method` is one of
/// "basic", "z", "df", "z-df".
#[pyfunction]
#[pyo3(signature = (method, delta, sigma_y_sq, r_squared, c, alpha = 0.05, power = 0.8, gamma = "1:1"))]
#[allow(clippy::too_many_arguments)]
fn plan_one(
    method: &str,
    delta: f64,
    sigma_y_sq: f64,
    r_squared: f64,
    c: usize,
    alpha: f64,
    power: f64,
    gamma: &str,
) -> PyResult<u64> {
    let method = method_from_name(method).map_err(value_err)?;
    let design = design_from_args(delta, gamma, alpha, power, c).map_err(value_err)?;
    let plan = sizing::size_with(method, &design, sigma_y_sq, r_squared).map_err(value_err)?;
    Ok(plan.n_total)
}

/// Recalculated total sample size from a blinded interim variance
/// estimate. Uses the z-corrected formula with the pooled variance
/// standing in for sigma_Y^2 (1 - R^2).
#[pyfunction]
#[pyo3(signature = (sigma_tau_sq, delta, alpha = 0.05, power = 0.8, gamma = "1:1"))]
fn recalculated_size(
    sigma_tau_sq: f64,
    delta: f64,
    alpha: f64,
    power: f64,
    gamma: &str,
) -> PyResult<u64> {
    // The recalculation formula ignores covariate count and planning
    // moments; placeholders keep the config constructor satisfied.
    let design = design_from_args(delta, gamma, alpha, power, 0).map_err(value_err)?;
    let cfg = RecalcConfig::new(design, 1.0, 0.0, 0.5, 4.0).map_err(value_err)?;
    ancova_sizer::recalc::recalculated_size(sigma_tau_sq, &cfg).map_err(value_err)
}

/// Run the full blinded recalculation on interim rows. `z` is one row
/// of covariate values per subject (empty inner lists for c = 0).
/// Returns the audit dict with n_init through n_final.
#[pyfunction]
#[pyo3(signature = (y, z, delta, planning_sigma_y_sq, planning_r_squared,
                    alpha = 0.05, power = 0.8, gamma = "1:1", tau = 0.5, k_bound = 4.0))]
#[allow(clippy::too_many_arguments)]
fn run_recalc<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
    delta: f64,
    planning_sigma_y_sq: f64,
    planning_r_squared: f64,
    alpha: f64,
    power: f64,
    gamma: &str,
    tau: f64,
    k_bound: f64,
) -> PyResult<Bound<'py, PyAny>> {
    if y.len() != z.len() {
        return Err(PyValueError::new_err(format!(
            "y has {} rows but z has {}",
            y.len(),
            z.len()
        )));
    }
    let c = z.first().map_or(0, Vec::len);
    let design = design_from_args(delta, gamma, alpha, power, c).map_err(value_err)?;
    let cfg = RecalcConfig::new(design, planning_sigma_y_sq, planning_r_squared, tau, k_bound)
        .map_err(value_err)?;
    let mut interim = InterimData::new(c);
    for (yi, zi) in y.iter().zip(&z) {
        interim.push(*yi, zi).map_err(value_err)?;
    }
    let result = ancova_sizer::recalc::run_recalc(&cfg, &interim).map_err(value_err)?;
    to_py(py, &result)
}

/// Fit the covariate-adjusted two-group model and return the estimates
/// as a dict. `groups` holds 1 or 2 per subject.
#[pyfunction]
fn fit_ancova<'py>(
    py: Python<'py>,
    groups: Vec<u8>,
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    if groups.len() != y.len() || y.len() != z.len() {
        return Err(PyValueError::new_err(format!(
            "length mismatch: {} groups, {} outcomes, {} covariate rows",
            groups.len(),
            y.len(),
            z.len()
        )));
    }
    let c = z.first().map_or(0, Vec::len);
    let mut data = TrialDataset::new(c);
    for ((g, yi), zi) in groups.iter().zip(&y).zip(&z) {
        data.push(*g, *yi, zi).map_err(value_err)?;
    }
    let fit = ancova_sizer::ancova::fit_ancova(&data).map_err(value_err)?;
    to_py(py, &fit)
}

/// Run one simulation scenario described by a JSON string (the same
/// schema the CLI batch file uses) and return the summary as a dict.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, spec_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec: ScenarioSpec = serde_json::from_str(spec_json)
        .map_err(|e| PyValueError::new_err(format!("bad scenario spec: {e}")))?;
    let result = ancova_sizer::mc::run_scenario(&spec).map_err(value_err)?;
    to_py(py, &result)
}

#[pymodule]
fn ancova_sizer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(std_normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(t_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(check_feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(cs_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(plan_one, m)?)?;
    m.add_function(wrap_pyfunction!(recalculated_size, m)?)?;
    m.add_function(wrap_pyfunction!(run_recalc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ancova, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
