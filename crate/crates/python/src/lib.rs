use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sofsyn_core::cli::{self, CliError};
use sofsyn_core::evolve::{self, EvolveConfig, Fitness, SearchBox};
use sofsyn_core::lmi::LmiSpec;
use sofsyn_core::plant::{GainMatrix, PolytopicPlant};
use sofsyn_core::sdp::SdpSettings;
use sofsyn_core::{benchmarks, oracle};

/// Per-vertex `(stable, H2², H∞)`.
type VertexNorms = Vec<(bool, Option<f64>, Option<f64>)>;

create_exception!(sofsyn, ConfigError, PyValueError);
create_exception!(sofsyn, NumericError, PyRuntimeError);

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(m) => ConfigError::new_err(m),
        CliError::Numeric(m) => NumericError::new_err(m),
    }
}

fn config_err(e: impl std::fmt::Display) -> PyErr {
    ConfigError::new_err(e.to_string())
}

#[pyclass(name = "Plant", module = "sofsyn", skip_from_py_object)]
#[derive(Clone)]
struct PyPlant {
    inner: PolytopicPlant,
}

impl PyPlant {
    fn gain(&self, flat: &[f64]) -> PyResult<GainMatrix> {
        let d = self.inner.dims();
        GainMatrix::from_flat(d.m, d.p, flat).map_err(config_err)
    }
}

#[pymethods]
impl PyPlant {
    /// Plant from the JSON form used in configuration files.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(config_err)
    }

    #[staticmethod]
    fn example1() -> Self {
        Self {
            inner: benchmarks::example1_plant(),
        }
    }

    #[staticmethod]
    fn example2() -> Self {
        Self {
            inner: benchmarks::example2_plant(),
        }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("plant serializes")
    }

    /// `(n, m, l, p, p1, p2)`
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize, usize, usize) {
        let d = self.inner.dims();
        (d.n, d.m, d.l, d.p, d.p1, d.p2)
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    /// Per-vertex `(stable, H2², H∞)` of the closed loop at `gain`.
    fn closed_loop_norms(&self, gain: Vec<f64>) -> PyResult<VertexNorms> {
        let loops = self.inner.closed_loops(&self.gain(&gain)?).map_err(config_err)?;
        Ok(loops
            .iter()
            .map(|cl| {
                let r = oracle::report(cl);
                (r.stable, r.h2_squared, r.hinf)
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!("Plant(vertices={}, n={}, m={}, p={})", self.inner.num_vertices(), d.n, d.m, d.p)
    }
}

#[pyclass(name = "LmiSpec", module = "sofsyn", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyLmiSpec {
    gamma: Option<f64>,
    delta_cap: Option<f64>,
    strictness_eps: f64,
}

#[pymethods]
impl PyLmiSpec {
    #[new]
    #[pyo3(signature = (gamma=None, delta_cap=None, strictness_eps=1e-7))]
    fn new(gamma: Option<f64>, delta_cap: Option<f64>, strictness_eps: f64) -> PyResult<Self> {
        let s = Self {
            gamma,
            delta_cap,
            strictness_eps,
        };
        s.spec().validate().map_err(config_err)?;
        Ok(s)
    }

    fn __repr__(&self) -> String {
        format!(
            "LmiSpec(gamma={:?}, delta_cap={:?}, strictness_eps={:e})",
            self.gamma, self.delta_cap, self.strictness_eps
        )
    }
}

impl PyLmiSpec {
    fn spec(&self) -> LmiSpec {
        LmiSpec {
            gamma: self.gamma,
            delta_cap: self.delta_cap,
            strictness_eps: self.strictness_eps,
        }
    }
}

#[pyclass(name = "EvolveConfig", module = "sofsyn", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyEvolveConfig {
    np: usize,
    max_generations: usize,
    seed: u64,
    search_box: (f64, f64),
    chi: f64,
    c1: f64,
    c2: f64,
    f: f64,
    cr: f64,
    resample_cap: usize,
}

#[pymethods]
impl PyEvolveConfig {
    #[new]
    #[pyo3(signature = (np=5, max_generations=5, seed=0, search_box=(-10.0, 10.0), chi=0.72984, c1=2.05, c2=2.05, f=0.5, cr=0.9, resample_cap=50))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        np: usize,
        max_generations: usize,
        seed: u64,
        search_box: (f64, f64),
        chi: f64,
        c1: f64,
        c2: f64,
        f: f64,
        cr: f64,
        resample_cap: usize,
    ) -> Self {
        Self {
            np,
            max_generations,
            seed,
            search_box,
            chi,
            c1,
            c2,
            f,
            cr,
            resample_cap,
        }
    }
}

impl PyEvolveConfig {
    fn config(&self) -> EvolveConfig {
        EvolveConfig {
            chi: self.chi,
            c1: self.c1,
            c2: self.c2,
            f: self.f,
            cr: self.cr,
            np: self.np,
            max_generations: self.max_generations,
            search_box: SearchBox::Uniform([self.search_box.0, self.search_box.1]),
            resample_cap: self.resample_cap,
            seed: self.seed,
        }
    }
}

#[pyclass(name = "RunTrace", module = "sofsyn", get_all)]
struct PyRunTrace {
    generations: Vec<usize>,
    best_fitness: Vec<f64>,
    best_gains: Vec<Vec<f64>>,
    best_gain: Vec<f64>,
    best_delta: f64,
    seed: u64,
    wall_time_s: f64,
    csv: String,
}

impl From<evolve::RunTrace> for PyRunTrace {
    fn from(t: evolve::RunTrace) -> Self {
        Self {
            generations: t.records.iter().map(|r| r.generation).collect(),
            best_fitness: t.records.iter().map(|r| r.best_fitness).collect(),
            best_gains: t.records.iter().map(|r| r.best_gain.clone()).collect(),
            csv: cli::trace_csv(&t),
            best_gain: t.best_gain,
            best_delta: t.best_delta,
            seed: t.seed,
            wall_time_s: t.wall_time_s,
        }
    }
}

#[pymethods]
impl PyRunTrace {
    fn __len__(&self) -> usize {
        self.generations.len()
    }

    fn __repr__(&self) -> String {
        format!("RunTrace(seed={}, best_delta={}, best_gain={:?})", self.seed, self.best_delta, self.best_gain)
    }
}

/// Minimized LMI bound at `gain`, or `None` when the gain is infeasible.
#[pyfunction]
#[pyo3(signature = (plant, gain, spec=None))]
fn fitness(py: Python<'_>, plant: &PyPlant, gain: Vec<f64>, spec: Option<PyLmiSpec>) -> PyResult<Option<f64>> {
    let k = plant.gain(&gain)?;
    let spec = spec.map(|s| s.spec()).unwrap_or_default();
    spec.validate().map_err(config_err)?;
    let inner = &plant.inner;
    Ok(py.detach(|| match evolve::fitness(&k, inner, &spec, &SdpSettings::default()) {
        Fitness::Feasible(v) => Some(v),
        Fitness::Infeasible(_) => None,
    }))
}

/// One PSO-DE run.
#[pyfunction]
#[pyo3(signature = (plant, spec=None, config=None))]
fn run(py: Python<'_>, plant: &PyPlant, spec: Option<PyLmiSpec>, config: Option<PyEvolveConfig>) -> PyResult<PyRunTrace> {
    let spec = spec.map(|s| s.spec()).unwrap_or_default();
    let cfg = config.map(|c| c.config()).unwrap_or_default();
    let inner = &plant.inner;
    let trace = py
        .detach(|| evolve::run(inner, &spec, &cfg, &SdpSettings::default(), &mut ()))
        .map_err(|e| cli_err(e.into()))?;
    Ok(trace.into())
}

/// Text report of `analyze` for the configuration file at `config`.
#[pyfunction]
fn analyze(py: Python<'_>, config: &str, gain: Vec<f64>) -> PyResult<String> {
    let cfg = cli::load_config(config.as_ref()).map_err(cli_err)?;
    let k = GainMatrix::from_flat(cfg.gain_dims().0, cfg.gain_dims().1, &gain).map_err(config_err)?;
    py.detach(|| cli::cmd_analyze(&cfg, &k)).map(|a| a.render()).map_err(cli_err)
}

/// Run `synthesize` on a configuration file; returns `(best_gain, best_delta)`.
#[pyfunction]
#[pyo3(signature = (config, seed=None, reps=None, out=None))]
fn synthesize(
    py: Python<'_>,
    config: &str,
    seed: Option<u64>,
    reps: Option<usize>,
    out: Option<String>,
) -> PyResult<(Vec<f64>, f64)> {
    let cfg = cli::load_config(config.as_ref()).map_err(cli_err)?;
    let opts = cli::SynthesizeOptions {
        seed,
        reps,
        out: out.map(Into::into),
    };
    let s = py.detach(|| cli::cmd_synthesize(&cfg, &opts)).map_err(cli_err)?;
    Ok((s.best_gain, s.best_delta))
}

#[pymodule]
fn sofsyn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlant>()?;
    m.add_class::<PyLmiSpec>()?;
    m.add_class::<PyEvolveConfig>()?;
    m.add_class::<PyRunTrace>()?;
    m.add_function(wrap_pyfunction!(fitness, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}
