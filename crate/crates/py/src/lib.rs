//! Python bindings.
//!
//! Waveforms and channels cross the boundary as lists of Python `complex`;
//! results come back as plain dicts. Errors map to `ValueError` for contract
//! and configuration problems and `RuntimeError` otherwise.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wptwave_core::baselines::{self, ChainReport};
use wptwave_core::channel::FrequencyResponse;
use wptwave_core::experiment::{run_sweep as core_run_sweep, ExperimentConfig};
use wptwave_core::hpa::{self, SspaParams};
use wptwave_core::model1::{optimize_model1 as core_model1, Model1Config, Model1Init};
use wptwave_core::model2::{optimize_model2 as core_model2, Model2Config, Model2Init};
use wptwave_core::rectenna::{self, RectennaParams};
use wptwave_core::signal::{FrequencyGrid, MultisineWaveform};
use wptwave_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Contract(_) | Error::Config(_) | Error::SaturationInfeasible { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn grid(n: usize, f0: f64, bandwidth: f64) -> PyResult<FrequencyGrid> {
    FrequencyGrid::with_bandwidth(f0, bandwidth, n).map_err(py_err)
}

fn waveform(weights: Vec<Complex64>, f0: f64, bandwidth: f64) -> PyResult<MultisineWaveform> {
    MultisineWaveform::new(grid(weights.len(), f0, bandwidth)?, weights).map_err(py_err)
}

fn channel(gains: Vec<Complex64>, f0: f64, bandwidth: f64) -> PyResult<FrequencyResponse> {
    FrequencyResponse::new(grid(gains.len(), f0, bandwidth)?, gains).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &ChainReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("p_in", r.p_in)?;
    d.set_item("p_out_hpa", r.p_out_hpa)?;
    d.set_item("p_discarded_bpf", r.p_discarded_bpf)?;
    d.set_item("p_tr", r.p_tr)?;
    d.set_item("obo_db", r.obo_db)?;
    d.set_item("pe", r.pe)?;
    d.set_item("ape", r.ape)?;
    d.set_item("z_dc", r.z_dc)?;
    d.set_item("pte", r.pte)?;
    d.set_item("papr_in", r.papr_in)?;
    d.set_item("papr_tr", r.papr_tr)?;
    Ok(d)
}

/// In-band post-amplifier weights and the full `2κ'N`-bin spectrum.
#[pyfunction]
#[pyo3(signature = (weights, gain=1.0, a_s_db=10.0, beta=4.0, kappa=2.0, f0=5.18e9, bandwidth=10e6))]
fn hpa_output_spectrum(
    weights: Vec<Complex64>,
    gain: f64,
    a_s_db: f64,
    beta: f64,
    kappa: f64,
    f0: f64,
    bandwidth: f64,
) -> PyResult<Vec<Complex64>> {
    let p = SspaParams::from_db(gain, a_s_db, beta).map_err(py_err)?;
    let s = hpa::hpa_output_spectrum(&p, &waveform(weights, f0, bandwidth)?, kappa).map_err(py_err)?;
    Ok(s.bins().to_vec())
}

#[pyfunction]
#[pyo3(signature = (weights, channel_gains, k2=0.0034, k4=0.3829, r_ant=50.0, r_load=1.0))]
fn z_dc(weights: Vec<Complex64>, channel_gains: Vec<Complex64>, k2: f64, k4: f64, r_ant: f64, r_load: f64) -> PyResult<f64> {
    let r = RectennaParams::new(k2, k4, r_ant, r_load).map_err(py_err)?;
    let (f0, b) = (5.18e9, 10e6);
    rectenna::z_dc(&r, &waveform(weights, f0, b)?, &channel(channel_gains, f0, b)?).map_err(py_err)
}

/// Full chain report for an in-band input waveform.
#[pyfunction]
#[pyo3(signature = (weights, channel_gains, gain=1.0, a_s_db=10.0, beta=4.0, kappa=2.0))]
fn evaluate_chain<'py>(
    py: Python<'py>,
    weights: Vec<Complex64>,
    channel_gains: Vec<Complex64>,
    gain: f64,
    a_s_db: f64,
    beta: f64,
    kappa: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = SspaParams::from_db(gain, a_s_db, beta).map_err(py_err)?;
    let (f0, b) = (5.18e9, 10e6);
    let r = baselines::evaluate_chain(
        &waveform(weights, f0, b)?,
        &p,
        &RectennaParams::default(),
        &channel(channel_gains, f0, b)?,
        kappa,
    )
    .map_err(py_err)?;
    report_dict(py, &r)
}

/// Model I optimum; `init` is one of `no_hpa_backoff`, `single_carrier`, `best_of`.
#[pyfunction]
#[pyo3(signature = (p_in_max, p_tr_max, channel_gains, gain=1.0, a_s_db=10.0, beta=4.0, init="best_of"))]
#[allow(clippy::too_many_arguments)]
fn optimize_model1<'py>(
    py: Python<'py>,
    p_in_max: f64,
    p_tr_max: f64,
    channel_gains: Vec<Complex64>,
    gain: f64,
    a_s_db: f64,
    beta: f64,
    init: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let p = SspaParams::from_db(gain, a_s_db, beta).map_err(py_err)?;
    let h = channel(channel_gains, 5.18e9, 10e6)?;
    let mut cfg = Model1Config::new(p_in_max, p_tr_max);
    cfg.init = match init {
        "no_hpa_backoff" => Model1Init::NoHpaBackoff,
        "single_carrier" => Model1Init::SingleCarrier,
        "best_of" => Model1Init::BestOf,
        other => return Err(PyValueError::new_err(format!("unknown init {other:?}"))),
    };
    let s = py.detach(|| core_model1(&cfg, &p, &RectennaParams::default(), &h)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("w_in", s.w_in.weights().to_vec())?;
    d.set_item("w_tr", s.w_tr.weights().to_vec())?;
    d.set_item("z_dc", s.z_dc)?;
    d.set_item("z_dc_trace", s.z_dc_trace.clone())?;
    d.set_item("status", s.diagnostics.status.as_str())?;
    d.set_item("report", report_dict(py, &s.report)?)?;
    Ok(d)
}

/// Model II optimum; `init` is one of `ideal`, `single_carrier`, `best_of`, `from_model1`.
#[pyfunction]
#[pyo3(signature = (p_in_max, p_tr_max, channel_gains, gain=1.0, a_s_db=10.0, beta=4.0, init="from_model1", extension_factor=1.5))]
#[allow(clippy::too_many_arguments)]
fn optimize_model2<'py>(
    py: Python<'py>,
    p_in_max: f64,
    p_tr_max: f64,
    channel_gains: Vec<Complex64>,
    gain: f64,
    a_s_db: f64,
    beta: f64,
    init: &str,
    extension_factor: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = SspaParams::from_db(gain, a_s_db, beta).map_err(py_err)?;
    let h = channel(channel_gains, 5.18e9, 10e6)?;
    let mut cfg = Model2Config::new(p_in_max, p_tr_max);
    cfg.extension_factor = Some(extension_factor);
    cfg.init = match init {
        "ideal" => Model2Init::Ideal,
        "single_carrier" => Model2Init::SingleCarrier,
        "best_of" => Model2Init::BestOf,
        "from_model1" => Model2Init::FromModel1,
        other => return Err(PyValueError::new_err(format!("unknown init {other:?}"))),
    };
    let s = py.detach(|| core_model2(&cfg, &p, &RectennaParams::default(), &h)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("w_tr", s.w_tr.weights().to_vec())?;
    d.set_item("input_samples", s.input_samples.clone())?;
    d.set_item("z_dc", s.z_dc)?;
    d.set_item("z_dc_trace", s.z_dc_trace.clone())?;
    d.set_item("max_envelope_ratio", s.max_envelope_ratio)?;
    d.set_item("p_in", s.p_in)?;
    d.set_item("z_dc_approx_ratio", s.approximation.as_ref().map(|a| a.z_dc_ratio))?;
    d.set_item("status", s.diagnostics.status.as_str())?;
    d.set_item("report", report_dict(py, &s.report)?)?;
    Ok(d)
}

#[pyfunction]
fn describe(config_path: &str) -> PyResult<String> {
    ExperimentConfig::from_path(config_path.as_ref()).and_then(|c| c.describe()).map_err(py_err)
}

/// Runs a sweep config; returns the number of rows written.
#[pyfunction]
#[pyo3(signature = (config_path, workers=1, output=None))]
fn run_sweep(py: Python<'_>, config_path: &str, workers: usize, output: Option<String>) -> PyResult<usize> {
    let mut cfg = ExperimentConfig::from_path(config_path.as_ref()).map_err(py_err)?;
    if let Some(o) = output {
        cfg.output = o.into();
    }
    let out = py.detach(|| core_run_sweep(&cfg, workers)).map_err(py_err)?;
    Ok(out.rows.len())
}

#[pymodule]
fn wptwave(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(hpa_output_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(z_dc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_chain, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_model1, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_model2, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
