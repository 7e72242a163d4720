//! Python bindings: build a scenario, synthesize the feedback gain and
//! simulate the open or closed loop.

use std::collections::BTreeMap;

use backstep_core::cli::{run_simulation, settling_time};
use backstep_core::coeffs::{SampleWindow, CATALOG_NAMES};
use backstep_core::config::ScenarioConfig;
use backstep_core::transforms::{synthesize, GainTable};
use backstep_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Boundary gain table `F(t, ξ)` with `m` rows and `n` columns.
#[pyclass(frozen)]
struct Gain {
    table: GainTable,
}

#[pymethods]
impl Gain {
    /// `(m, n)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.table.m, self.table.n)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.table.grid.nx
    }

    fn max_abs(&self) -> f64 {
        self.table.max_abs()
    }

    /// Interpolated entry `(i, j)` at time `t` and position `xi`.
    fn eval(&self, i: usize, j: usize, t: f64, xi: f64) -> PyResult<f64> {
        if i >= self.table.m || j >= self.table.n {
            return Err(PyValueError::new_err(format!("entry ({}, {}) out of range", i, j)));
        }
        Ok(self.table.eval(i, j, t, xi))
    }
}

/// A system plus grids, tolerances and horizon.
#[pyclass(frozen)]
struct Scenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    /// Starts from `config` (JSON text) or the defaults; keyword arguments
    /// override it.
    #[new]
    #[pyo3(signature = (catalog=None, params=None, config=None, nx=None, nt=None, n_sim=None, horizon=None, t0_max=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        catalog: Option<String>,
        params: Option<BTreeMap<String, String>>,
        config: Option<&str>,
        nx: Option<usize>,
        nt: Option<usize>,
        n_sim: Option<usize>,
        horizon: Option<f64>,
        t0_max: Option<f64>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => ScenarioConfig::from_json(text).map_err(py_err)?,
            None => ScenarioConfig::default(),
        };
        if let Some(name) = catalog {
            cfg.system.catalog = Some(name);
            cfg.system.file = None;
            cfg.system.spec = None;
        }
        if let Some(p) = params {
            cfg.system.params.extend(p);
        }
        if let Some(v) = nx {
            cfg.grids.nx = v;
        }
        if let Some(v) = nt {
            cfg.grids.nt = v;
        }
        if let Some(v) = n_sim {
            cfg.grids.n_sim = v;
        }
        if horizon.is_some() {
            cfg.horizon.t_horizon = horizon;
        }
        if let Some(v) = t0_max {
            cfg.horizon.t0_max = v;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
        cfg.validate().map_err(py_err)?;
        cfg.spec().map_err(py_err)?;
        Ok(Scenario { cfg })
    }

    /// The resolved configuration as JSON.
    fn config_json(&self) -> String {
        self.cfg.to_json()
    }

    fn config_hash(&self) -> PyResult<String> {
        Ok(self.cfg.hash(&self.cfg.spec().map_err(py_err)?))
    }

    /// `(n, m)`.
    #[getter]
    fn dims(&self) -> PyResult<(usize, usize)> {
        let spec = self.cfg.spec().map_err(py_err)?;
        Ok((spec.n, spec.m))
    }

    /// Names of the violated hypotheses; empty when the system is admissible.
    fn violations(&self) -> PyResult<Vec<String>> {
        let spec = self.cfg.spec().map_err(py_err)?;
        Ok(spec.validate(&SampleWindow::default()).kinds().iter().map(|k| format!("{:?}", k)).collect())
    }

    /// Uniform settling time of the closed loop.
    fn topt(&self, py: Python<'_>) -> PyResult<f64> {
        let cfg = &self.cfg;
        py.detach(|| {
            let spec = cfg.spec()?;
            let (r, formula) = settling_time(&spec, cfg)?;
            Ok(formula.unwrap_or(r.topt))
        })
        .map_err(py_err)
    }

    fn synthesize(&self, py: Python<'_>) -> PyResult<Gain> {
        let cfg = &self.cfg;
        let table = py.detach(|| synthesize(&cfg.spec()?, &cfg.synthesis()).map(|s| s.gain)).map_err(py_err)?;
        Ok(Gain { table })
    }

    /// Runs the closed loop with `gain`, or the open loop without it.
    /// Returns a dict with `t`, `l2`, `x` and the final `y` (one list per
    /// component).
    #[pyo3(signature = (gain=None))]
    fn simulate<'py>(&self, py: Python<'py>, gain: Option<&Gain>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = &self.cfg;
        let table = gain.map(|g| g.table.clone());
        let trace = py.detach(|| run_simulation(&cfg.spec()?, cfg, table)).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("t", trace.records.iter().map(|r| r.t).collect::<Vec<_>>())?;
        out.set_item("l2", trace.records.iter().map(|r| r.l2).collect::<Vec<_>>())?;
        let last = trace.last();
        out.set_item("x", (0..last.grid.nodes()).map(|k| last.grid.x(k)).collect::<Vec<_>>())?;
        out.set_item("y", last.values.clone())?;
        Ok(out)
    }
}

/// Names accepted by `Scenario(catalog=...)`.
#[pyfunction]
fn catalog_names() -> Vec<&'static str> {
    CATALOG_NAMES.to_vec()
}

#[pymodule]
fn backstep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Gain>()?;
    m.add_function(wrap_pyfunction!(catalog_names, m)?)?;
    Ok(())
}
