//! Python bindings: run any experiment by name, plus direct access to the
//! kernel at initialization and the ideal FRG spectrum.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use gatelab::config::Settings;
use gatelab::experiments::{self, Command, ExperimentSpec};
use gatelab::linalg::Prng;
use gatelab::network::{GatingVariant, NetConfig, Network};
use gatelab::report::Cell;

fn to_py_err(e: gatelab::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Runs `command` with `settings` overrides. Returns a dict with `summary`
/// (lines), `checks` (dicts) and `tables` (name -> list of row dicts).
/// Artifacts are written only when `out` is given.
#[pyfunction]
#[pyo3(signature = (command, settings=None, out=None))]
fn run<'py>(
    py: Python<'py>,
    command: &str,
    settings: Option<Vec<(String, String)>>,
    out: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let command: Command = command.parse().map_err(PyValueError::new_err)?;
    let mut overrides = Settings::new();
    for (k, v) in settings.unwrap_or_default() {
        overrides.set(&k, v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let out_dir = out.clone().unwrap_or_else(|| std::env::temp_dir().join("gatelab-py").display().to_string());
    let spec = ExperimentSpec::from_settings(command, &overrides, out_dir).map_err(to_py_err)?;
    let artifacts = py.detach(|| experiments::run(&spec)).map_err(to_py_err)?;
    if out.is_some() {
        experiments::write_artifacts(&spec, &artifacts).map_err(to_py_err)?;
    }

    let result = PyDict::new(py);
    result.set_item("summary", &artifacts.summary)?;
    let checks = PyList::empty(py);
    for c in &artifacts.checks {
        let d = PyDict::new(py);
        d.set_item("name", &c.name)?;
        d.set_item("measured", c.measured)?;
        d.set_item("reference", c.reference)?;
        d.set_item("tolerance", c.tolerance)?;
        d.set_item("pass", c.pass)?;
        d.set_item("report_only", c.kind == experiments::CheckKind::Report)?;
        checks.append(d)?;
    }
    result.set_item("checks", checks)?;
    let tables = PyDict::new(py);
    for (name, table) in &artifacts.tables {
        let rows = PyList::empty(py);
        for row in &table.rows {
            let r = PyDict::new(py);
            for (h, cell) in table.header.iter().zip(row) {
                match cell {
                    Cell::Num(v) => r.set_item(h, *v)?,
                    Cell::Int(v) => r.set_item(h, *v)?,
                    Cell::Text(s) => r.set_item(h, s)?,
                }
            }
            rows.append(r)?;
        }
        tables.set_item(name, rows)?;
    }
    result.set_item("tables", tables)?;
    Ok(result)
}

/// Neural tangent Gram matrix of a freshly initialized network on `xs`.
/// FRG gates are drawn per row of `xs`.
#[pyfunction]
#[pyo3(signature = (variant, xs, width, depth, seed=0, sigma=None))]
fn ntk_gram(
    variant: &str,
    xs: Vec<Vec<f64>>,
    width: usize,
    depth: usize,
    seed: u64,
    sigma: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let variant: GatingVariant = variant.parse().map_err(|e: gatelab::network::NetworkError| PyValueError::new_err(e.to_string()))?;
    let d_in = xs.first().map_or(0, Vec::len);
    let mut config = NetConfig::new(variant, d_in, width, depth);
    if let Some(s) = sigma {
        config = config.with_sigma(s);
    }
    let gram = || -> Result<Vec<Vec<f64>>, gatelab::Error> {
        let mut rng = Prng::new(seed);
        let mut net = Network::init(config, &mut rng)?;
        if variant == GatingVariant::Frg {
            net.register_inputs(&xs, &mut rng)?;
        }
        let k = gatelab::gram::kernel(&net, &xs)?.total();
        Ok((0..k.rows()).map(|i| k.row(i).to_vec()).collect())
    };
    gram().map_err(to_py_err)
}

/// Ascending eigenvalues of the ideal FRG Gram matrix.
#[pyfunction]
fn ideal_frg_spectrum(n: usize, mu: f64, depth: usize) -> Vec<f64> {
    gatelab::theory::ideal_frg_spectrum(n, mu, depth)
}

#[pymodule]
fn gatelab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("COMMANDS", Command::ALL.map(Command::name).to_vec())?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ntk_gram, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_frg_spectrum, m)?)?;
    Ok(())
}
