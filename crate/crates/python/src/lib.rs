//! Python bindings: the game, planning, surrogates, the regressor, risk
//! bounds and batch simulation.

use std::path::PathBuf;
use std::sync::Arc;

use etmarl_core::exec::{self, Start};
use etmarl_core::harness::{self, RunConfig};
use etmarl_core::planner;
use etmarl_core::svr::{self, default_bandwidth, tube_params_from_nu_svr};
use etmarl_core::{
    EnvConfig, GlobalState, JointAction, SampleSet, SurrogateSample, TriggerKind, TriggerPolicy,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(etmarl, EtmarlError, PyException);

fn py_err(e: etmarl_core::Error) -> PyErr {
    EtmarlError::new_err(format!("{}: {e}", e.kind()))
}

/// `(next state or None when tagged, probability, reward)`.
type Outcome = (Option<Vec<i32>>, f64, f64);

fn state(coords: Vec<i32>) -> GlobalState {
    GlobalState::new(coords)
}

/// Two predators chasing one prey on a square grid.
#[pyclass(name = "ParticleTag", module = "etmarl", frozen)]
struct PyParticleTag {
    inner: etmarl_core::ParticleTag,
}

#[pymethods]
impl PyParticleTag {
    #[new]
    #[pyo3(signature = (width, step_cap = None))]
    fn new(width: u32, step_cap: Option<u32>) -> PyResult<Self> {
        let mut cfg = EnvConfig::new(width);
        if let Some(cap) = step_cap {
            cfg.step_cap = cap;
        }
        Ok(PyParticleTag {
            inner: etmarl_core::ParticleTag::new(cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn state_index(&self, x: Vec<i32>) -> PyResult<usize> {
        self.inner.state_index(&state(x)).map_err(py_err)
    }

    fn state_at(&self, index: usize) -> PyResult<Vec<i32>> {
        Ok(self.inner.state_at(index).map_err(py_err)?.into_inner())
    }

    /// One transition; returns `(next_state, reward, terminal)`.
    fn step(&self, x: Vec<i32>, actions: Vec<usize>, seed: u64) -> PyResult<(Vec<i32>, f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self
            .inner
            .step(&state(x), &JointAction::new(actions), &mut rng)
            .map_err(py_err)?;
        Ok((out.next_state.into_inner(), out.reward, out.terminal))
    }

    /// `(next_state or None when tagged, probability, reward)` triples.
    fn transition_distribution(&self, x: Vec<i32>, actions: Vec<usize>) -> PyResult<Vec<Outcome>> {
        let dist = self
            .inner
            .transition_distribution(&state(x), &JointAction::new(actions))
            .map_err(py_err)?;
        Ok(dist
            .into_iter()
            .map(|(s, p, r)| {
                let next = match s {
                    etmarl_core::Successor::State(y) => Some(y.into_inner()),
                    etmarl_core::Successor::Terminal => None,
                };
                (next, p, r)
            })
            .collect())
    }
}

/// Joint-action value table with its greedy policy.
#[pyclass(name = "QTable", module = "etmarl", frozen)]
struct PyQTable {
    q: Arc<etmarl_core::QTable>,
    policy: Arc<etmarl_core::PolicyTable>,
}

impl PyQTable {
    fn wrap(q: etmarl_core::QTable) -> Self {
        let policy = etmarl_core::PolicyTable::from_q(&q);
        PyQTable {
            q: Arc::new(q),
            policy: Arc::new(policy),
        }
    }
}

#[pymethods]
impl PyQTable {
    #[getter]
    fn gamma(&self) -> f64 {
        self.q.gamma()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.q.state_count()
    }

    fn get(&self, state_index: usize, action: usize) -> PyResult<f64> {
        let row = self.q.row(state_index).map_err(py_err)?;
        row.get(action)
            .copied()
            .ok_or_else(|| EtmarlError::new_err(format!("invalid_action: {action}")))
    }

    fn v_star(&self, env: &PyParticleTag, x: Vec<i32>) -> PyResult<f64> {
        planner::v_star(&env.inner, &self.q, &state(x)).map_err(py_err)
    }

    /// Greedy joint action as one move index per predator.
    fn pi_star(&self, env: &PyParticleTag, x: Vec<i32>) -> PyResult<Vec<usize>> {
        Ok(planner::pi_star(&env.inner, &self.q, &state(x)).map_err(py_err)?.actions().to_vec())
    }

    fn suboptimality_gap(&self) -> f64 {
        self.q.suboptimality_gap()
    }

    fn bellman_residual(&self, env: &PyParticleTag) -> PyResult<f64> {
        planner::bellman_residual(&env.inner, &self.q).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.q.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self::wrap(etmarl_core::QTable::load(&path).map_err(py_err)?))
    }
}

/// Solves the game exactly.
#[pyfunction]
#[pyo3(signature = (env, gamma = 0.97, tol = 1e-9))]
fn value_iteration(py: Python<'_>, env: &PyParticleTag, gamma: f64, tol: f64) -> PyResult<PyQTable> {
    let q = py.detach(|| planner::value_iteration(&env.inner, gamma, tol)).map_err(py_err)?;
    Ok(PyQTable::wrap(q))
}

/// Largest radius around `x` within which the greedy action at `x` stays
/// within `alpha` of optimal.
#[pyfunction]
fn gamma_alpha(env: &PyParticleTag, q: &PyQTable, x: Vec<i32>, alpha: f64) -> PyResult<u32> {
    etmarl_core::gamma_alpha(&env.inner, &state(x), alpha, &q.q, &q.policy).map_err(py_err)
}

/// Surrogate values of every state, in state-index order.
#[pyfunction]
fn gamma_alpha_table(py: Python<'_>, env: &PyParticleTag, q: &PyQTable, alpha: f64) -> PyResult<Vec<u32>> {
    py.detach(|| etmarl_core::gamma_alpha_table(&env.inner, alpha, &q.q, &q.policy))
        .map_err(py_err)
}

/// Uniform sample of distinct states with their surrogate labels.
#[pyfunction]
fn sample_surrogates(
    env: &PyParticleTag,
    q: &PyQTable,
    alpha: f64,
    size: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<i32>>, Vec<u32>)> {
    let set = etmarl_core::sample_surrogates(&env.inner, alpha, size, seed, &q.q, &q.policy).map_err(py_err)?;
    let labels = set.samples.iter().map(|s| s.y).collect();
    let states = set.samples.into_iter().map(|s| s.x.into_inner()).collect();
    Ok((states, labels))
}

/// Kernel regressor with a fitted tube radius `kappa`.
#[pyclass(name = "SvrModel", module = "etmarl", frozen)]
struct PySvrModel {
    inner: Arc<etmarl_core::SvrModel>,
}

fn sample_set(states: Vec<Vec<i32>>, targets: &[u32]) -> SampleSet {
    SampleSet {
        samples: states
            .into_iter()
            .zip(targets)
            .map(|(x, &y)| SurrogateSample { x: state(x), y, alpha: 0.0 })
            .collect(),
        alpha: 0.0,
        source_seed: 0,
    }
}

#[pymethods]
impl PySvrModel {
    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.inner.support_states.len()
    }

    fn predict(&self, x: Vec<i32>) -> f64 {
        self.inner.predict(&state(x))
    }

    /// Prediction minus the tube radius.
    fn threshold(&self, x: Vec<i32>) -> f64 {
        self.inner.threshold(&state(x))
    }

    fn count_outliers(&self, states: Vec<Vec<i32>>, targets: Vec<u32>) -> usize {
        svr::count_outliers(&self.inner, &sample_set(states, &targets))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySvrModel {
            inner: Arc::new(etmarl_core::SvrModel::load(&path).map_err(py_err)?),
        })
    }
}

/// Fits the regressor. Give either `(rho, tau)` or `(nu, c)`; the bandwidth
/// defaults to the median heuristic.
#[pyfunction]
#[pyo3(signature = (states, targets, rho = None, tau = None, nu = None, c = None, bandwidth = None))]
#[allow(clippy::too_many_arguments)]
fn fit_svr(
    py: Python<'_>,
    states: Vec<Vec<i32>>,
    targets: Vec<u32>,
    rho: Option<f64>,
    tau: Option<f64>,
    nu: Option<f64>,
    c: Option<f64>,
    bandwidth: Option<f64>,
) -> PyResult<PySvrModel> {
    let set = sample_set(states, &targets);
    let (rho, tau) = match (rho, tau, nu, c) {
        (Some(r), Some(t), None, None) => (r, t),
        (None, None, Some(n), Some(c)) => tube_params_from_nu_svr(n, c, set.len()),
        _ => return Err(EtmarlError::new_err("invalid_input: give rho and tau, or nu and c")),
    };
    let bandwidth = bandwidth.unwrap_or_else(|| default_bandwidth(&set.states()));
    let model = py
        .detach(|| etmarl_core::fit_svr(&set, rho, tau, etmarl_core::Kernel::Rbf { bandwidth }))
        .map_err(py_err)?;
    Ok(PySvrModel { inner: Arc::new(model) })
}

/// `(eps_lo, eps_hi)` for `s_star` outliers among `s` samples.
#[pyfunction]
#[pyo3(signature = (s, s_star, beta = 1e-3))]
fn epsilon_bounds(py: Python<'_>, s: usize, s_star: usize, beta: f64) -> PyResult<(f64, f64)> {
    let b = py.detach(|| etmarl_core::epsilon_bounds(s, s_star, beta)).map_err(py_err)?;
    Ok((b.eps_lo, b.eps_hi))
}

#[pyfunction]
#[pyo3(signature = (alpha, eps_hi, iota, gamma = 0.97))]
fn corollary1_delta(alpha: f64, eps_hi: f64, iota: f64, gamma: f64) -> PyResult<f64> {
    exec::corollary1_delta(alpha, eps_hi, iota, gamma).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (v_star_x0, alpha, gamma = 0.97))]
fn theorem1_bound(v_star_x0: f64, alpha: f64, gamma: f64) -> f64 {
    exec::theorem1_bound(v_star_x0, alpha, gamma)
}

/// Plays `n_games` games and returns the batch summary as a dict, plus the
/// per-game returns and message counts.
#[pyfunction]
#[pyo3(signature = (env, q, trigger = "exact", alpha = 0.0, model = None, n_games = 1000, seed = 0, start = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    env: &PyParticleTag,
    q: &PyQTable,
    trigger: &str,
    alpha: f64,
    model: Option<&PySvrModel>,
    n_games: usize,
    seed: u64,
    start: Option<Vec<i32>>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: TriggerKind = trigger.parse().map_err(py_err)?;
    let policy = match kind {
        TriggerKind::FullComm => TriggerPolicy::FullComm,
        TriggerKind::Never => TriggerPolicy::Never,
        TriggerKind::Exact => TriggerPolicy::Exact {
            alpha,
            table: Arc::new(
                etmarl_core::gamma_alpha_table(&env.inner, alpha, &q.q, &q.policy).map_err(py_err)?,
            ),
        },
        TriggerKind::Svr => TriggerPolicy::Svr {
            alpha,
            model: model
                .map(|m| m.inner.clone())
                .ok_or_else(|| EtmarlError::new_err("invalid_input: the svr trigger needs a model"))?,
        },
    };
    let start = start.map_or(Start::Uniform, |x| Start::Fixed(state(x)));
    let batch = py
        .detach(|| exec::run_batch(&env.inner, &q.policy, &policy, q.q.gamma(), n_games, seed, &start))
        .map_err(py_err)?;
    let s = &batch.summary;
    let out = PyDict::new(py);
    out.set_item("trigger", kind.as_str())?;
    out.set_item("alpha", alpha)?;
    out.set_item("games", s.games)?;
    out.set_item("mean_return", s.mean_return)?;
    out.set_item("std_return", s.std_return)?;
    out.set_item("mean_length", s.mean_length)?;
    out.set_item("mean_msgs", s.mean_msgs)?;
    out.set_item("msg_rate", s.msg_rate)?;
    let returns: Vec<f64> = batch.records.iter().map(|r| r.discounted_return).collect();
    let msgs: Vec<u32> = batch.records.iter().map(|r| r.total_messages()).collect();
    out.set_item("returns", returns)?;
    out.set_item("messages", msgs)?;
    Ok(out)
}

/// Runs every stage for the configuration file and returns the report path.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: PathBuf) -> PyResult<PathBuf> {
    let cfg = RunConfig::load(&config).map_err(py_err)?;
    let (files, _) = py.detach(|| harness::run_pipeline(&cfg)).map_err(py_err)?;
    Ok(files.markdown)
}

#[pymodule]
fn etmarl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EtmarlError", m.py().get_type::<EtmarlError>())?;
    m.add_class::<PyParticleTag>()?;
    m.add_class::<PyQTable>()?;
    m.add_class::<PySvrModel>()?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_alpha_table, m)?)?;
    m.add_function(wrap_pyfunction!(sample_surrogates, m)?)?;
    m.add_function(wrap_pyfunction!(fit_svr, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(corollary1_delta, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
