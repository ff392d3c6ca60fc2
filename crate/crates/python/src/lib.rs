//! Python bindings. Structured results (reports, evaluations, configs)
//! cross the boundary as JSON and come back as plain dicts and lists.

use mediated_marl::game::PayoffSpec;
use mediated_marl::harness::{self, EnvId, MediatorSetting, RunConfig};
use mediated_marl::oracle::{self, MixedProfile};
use mediated_marl::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Parse(_) | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a JSON string or any object `json.dumps` can serialize.
fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match value.extract::<String>() {
        Ok(s) => s,
        Err(_) => value.py().import("json")?.call_method1("dumps", (value,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// A normal-form or public goods game.
#[pyclass(name = "Game", module = "mediated", frozen)]
struct PyGame {
    spec: PayoffSpec,
}

#[pymethods]
impl PyGame {
    #[staticmethod]
    fn prisoners_dilemma() -> Self {
        PyGame {
            spec: PayoffSpec::prisoners_dilemma(),
        }
    }

    #[staticmethod]
    fn pd_with_sacrifice() -> Self {
        PyGame {
            spec: PayoffSpec::pd_with_sacrifice(),
        }
    }

    #[staticmethod]
    fn two_step_pd() -> Self {
        PyGame {
            spec: PayoffSpec::two_step_pd(),
        }
    }

    #[staticmethod]
    fn public_goods(num_agents: usize, multiplier: f64) -> PyResult<Self> {
        let spec = PayoffSpec::public_goods(num_agents, multiplier);
        spec.validate().map_err(py_err)?;
        Ok(PyGame { spec })
    }

    #[staticmethod]
    fn iterative_public_goods(num_agents: usize, multiplier: f64) -> PyResult<Self> {
        let spec = PayoffSpec::iterative_public_goods(num_agents, multiplier);
        spec.validate().map_err(py_err)?;
        Ok(PyGame { spec })
    }

    #[getter]
    fn num_agents(&self) -> usize {
        self.spec.num_agents
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn num_actions(&self, agent: usize) -> PyResult<usize> {
        if agent >= self.spec.num_agents {
            return Err(PyValueError::new_err(format!("no agent {agent}")));
        }
        Ok(self.spec.num_actions(agent))
    }

    /// `(min, max)` expected per-agent returns used to normalize rewards.
    fn normalization(&self) -> PyResult<(f64, f64)> {
        let n = oracle::normalization_constants(&self.spec).map_err(py_err)?;
        Ok((n.min, n.max))
    }

    /// Exact expected return of every agent under a mixed profile.
    fn expected_payoffs(&self, profile: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let profile: MixedProfile = from_py(profile)?;
        oracle::expected_payoffs(&self.spec, &profile).map_err(py_err)
    }

    /// How much `agent` gains by its best deviation from `profile`.
    fn best_response_gap(&self, profile: &Bound<'_, PyAny>, agent: usize) -> PyResult<f64> {
        let profile: MixedProfile = from_py(profile)?;
        oracle::best_response_gap(&self.spec, &profile, agent).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Game(agents={}, horizon={})", self.spec.num_agents, self.spec.horizon)
    }
}

/// Experiment configuration, starting from an environment's preset.
#[pyclass(name = "RunConfig", module = "mediated")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (env, mediator = None, k = None, iterations = None, seeds = None))]
    fn new(
        env: &str,
        mediator: Option<&str>,
        k: Option<usize>,
        iterations: Option<u64>,
        seeds: Option<Vec<u64>>,
    ) -> PyResult<Self> {
        let mut inner = RunConfig::preset(parse::<EnvId>(env)?);
        if let Some(m) = mediator {
            inner.mediator.mode = parse::<MediatorSetting>(m)?;
        }
        if let Some(k) = k {
            inner.mediation.k = k;
        }
        if let Some(it) = iterations {
            inner.harness.iterations = it;
        }
        if let Some(s) = seeds {
            inner.harness.seeds = s;
        }
        inner.validate().map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    /// Parse a TOML document laid over the preset of its (or `env`'s)
    /// environment.
    #[staticmethod]
    #[pyo3(signature = (text, env = None))]
    fn from_toml(text: &str, env: Option<&str>) -> PyResult<Self> {
        let env = env.map(parse::<EnvId>).transpose()?;
        let inner = RunConfig::from_toml(text, env).map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn from_dict(value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: RunConfig = from_py(value)?;
        inner.validate().map_err(py_err)?;
        Ok(PyRunConfig { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn game(&self) -> PyGame {
        PyGame {
            spec: self.inner.spec(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(env={}, mediator={}, k={}, iterations={}, seeds={})",
            self.inner.game.env,
            self.inner.mediator.mode,
            self.inner.mediation.k,
            self.inner.harness.iterations,
            self.inner.harness.seeds.len()
        )
    }
}

/// Agents and mediator of one seed, trained one iteration at a time.
#[pyclass(name = "Trainer", module = "mediated")]
struct PyTrainer {
    inner: harness::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyRunConfig, seed: u64) -> PyResult<Self> {
        let inner = harness::Trainer::new(&config.inner, seed).map_err(py_err)?;
        Ok(PyTrainer { inner })
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.inner.iteration
    }

    /// Run `iterations` training iterations and return every agent's mean
    /// return over the last batch.
    #[pyo3(signature = (iterations = 1))]
    fn step(&mut self, py: Python<'_>, iterations: u64) -> PyResult<Vec<f64>> {
        let n = self.inner.protocol.spec.num_agents;
        let mut mean = vec![0.0; n];
        for _ in 0..iterations {
            let batch = py.detach(|| self.inner.step()).map_err(py_err)?;
            mean = vec![0.0; n];
            for ep in &batch {
                for (m, r) in mean.iter_mut().zip(ep.returns()) {
                    *m += r / batch.len() as f64;
                }
            }
        }
        Ok(mean)
    }

    /// Statistics of the current policies over fresh evaluation episodes.
    fn evaluate<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let eval = py.detach(|| self.inner.evaluate()).map_err(py_err)?;
        to_py(py, &eval)
    }
}

/// Train and evaluate one seed.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyRunConfig, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| harness::train(&config.inner, seed)).map_err(py_err)?;
    to_py(py, &report)
}

/// Train every configured seed and aggregate the results.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| harness::sweep(&config.inner)).map_err(py_err)?;
    to_py(py, &report)
}

/// Mediator cooperation probability for each coalition size `0..=N` that
/// makes full commitment an equilibrium of the one-shot public goods game.
#[pyfunction]
fn optimal_pgg_mediator(num_agents: usize, multiplier: f64) -> PyResult<Vec<f64>> {
    oracle::optimal_constrained_mediator_pgg(num_agents, multiplier).map_err(py_err)
}

#[pymodule]
fn mediated(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGame>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_pgg_mediator, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
