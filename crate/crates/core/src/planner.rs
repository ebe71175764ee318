//! Optimal joint action values by value iteration (model-based reference) and
//! tabular joint Q-learning, plus the greedy policy and suboptimality gap
//! derived from a table.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{GlobalState, JointAction, ParticleTag, TabularMdp, MOVES_PER_AGENT, N_AGENTS};
use crate::error::{Error, Result};

const QTABLE_MAGIC: &[u8; 4] = b"ETMQ";
const POLICY_MAGIC: &[u8; 4] = b"ETMP";
const FORMAT_VERSION: u32 = 1;

/// Dense `(state, joint action) -> value` table.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    gamma: f64,
    state_count: usize,
    action_count: usize,
    /// Arena width and agent count, recorded in the persisted header. Zero for
    /// MDPs that are not grid worlds.
    pub width: u32,
    pub n_agents: u32,
}

impl QTable {
    pub fn zeros(state_count: usize, action_count: usize, gamma: f64) -> Self {
        QTable {
            values: vec![0.0; state_count * action_count],
            gamma,
            state_count,
            action_count,
            width: 0,
            n_agents: 0,
        }
    }

    pub fn from_values(values: Vec<f64>, state_count: usize, action_count: usize, gamma: f64) -> Result<Self> {
        if values.len() != state_count * action_count {
            return Err(Error::InvalidInput(format!(
                "{} values for a {state_count}x{action_count} table",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Q value".into()));
        }
        Ok(QTable {
            values,
            gamma,
            state_count,
            action_count,
            width: 0,
            n_agents: 0,
        })
    }

    pub(crate) fn with_grid(mut self, env: &ParticleTag) -> Self {
        self.width = env.width();
        self.n_agents = N_AGENTS as u32;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, state: usize) -> Result<&[f64]> {
        if state >= self.state_count {
            return Err(Error::InvalidStateIndex {
                index: state,
                count: self.state_count,
            });
        }
        Ok(self.row_unchecked(state))
    }

    #[inline]
    pub(crate) fn row_unchecked(&self, state: usize) -> &[f64] {
        &self.values[state * self.action_count..(state + 1) * self.action_count]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.action_count + action]
    }

    /// `max_U Q(x, U)`.
    pub fn v_star(&self, state: usize) -> Result<f64> {
        Ok(row_max(self.row(state)?))
    }

    /// Greedy joint action index, lowest index on ties.
    pub fn pi_star(&self, state: usize) -> Result<usize> {
        Ok(row_argmax(self.row(state)?))
    }

    /// Worst gap `max_{x,U} V(x) - Q(x,U)`.
    pub fn suboptimality_gap(&self) -> f64 {
        (0..self.state_count)
            .map(|s| {
                let row = self.row_unchecked(s);
                let v = row_max(row);
                row.iter().map(|q| v - q).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.state_count).map(|s| row_max(self.row_unchecked(s))).collect()
    }

    /// Writes the little-endian binary table.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(QTABLE_MAGIC)?;
        write(&FORMAT_VERSION.to_le_bytes())?;
        write(&self.width.to_le_bytes())?;
        write(&self.n_agents.to_le_bytes())?;
        write(&(self.action_count as u32).to_le_bytes())?;
        write(&(self.state_count as u64).to_le_bytes())?;
        write(&self.gamma.to_le_bytes())?;
        for v in &self.values {
            write(&v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(&bytes, "Q table");
        if r.take(4)? != QTABLE_MAGIC {
            return Err(Error::format("Q table", "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format("Q table", format!("unsupported version {version}")));
        }
        let width = r.u32()?;
        let n_agents = r.u32()?;
        let action_count = r.u32()? as usize;
        let state_count = r.u64()? as usize;
        let gamma = r.f64()?;
        let n = state_count
            .checked_mul(action_count)
            .ok_or_else(|| Error::format("Q table", "size overflow"))?;
        if r.remaining() != n * 8 {
            return Err(Error::format(
                "Q table",
                format!("expected {} value bytes, found {}", n * 8, r.remaining()),
            ));
        }
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(QTable {
            values,
            gamma,
            state_count,
            action_count,
            width,
            n_agents,
        })
    }
}

/// Sidecar metadata stored next to a persisted Q table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTableMeta {
    pub mode: TrainMode,
    pub gamma: f64,
    pub arena_width: u32,
    pub state_count: usize,
    pub action_count: usize,
    pub bellman_residual: f64,
    pub suboptimality_gap: f64,
    pub sha256: String,
}

impl QTableMeta {
    pub fn sidecar_path(table: &Path) -> PathBuf {
        table.with_extension("toml")
    }

    pub fn save(&self, table: &Path) -> Result<()> {
        let path = Self::sidecar_path(table);
        let text = toml::to_string(self).map_err(|e| Error::format("Q table metadata", e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(table: &Path) -> Result<Self> {
        let path = Self::sidecar_path(table);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("Q table metadata", e.to_string()))
    }
}

#[inline]
pub(crate) fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[inline]
pub(crate) fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &q) in row.iter().enumerate().skip(1) {
        if q > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy joint policy, one joint-action index per state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyTable {
    actions: Vec<u16>,
    action_count: usize,
}

impl PolicyTable {
    pub fn from_q(q: &QTable) -> Self {
        let actions = (0..q.state_count())
            .into_par_iter()
            .map(|s| row_argmax(q.row_unchecked(s)) as u16)
            .collect();
        PolicyTable {
            actions,
            action_count: q.action_count(),
        }
    }

    /// A policy that plays `joint` everywhere.
    pub fn constant(state_count: usize, action_count: usize, joint: usize) -> Self {
        PolicyTable {
            actions: vec![joint as u16; state_count],
            action_count,
        }
    }

    pub fn state_count(&self) -> usize {
        self.actions.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn action(&self, state: usize) -> Result<usize> {
        self.actions
            .get(state)
            .map(|&a| a as usize)
            .ok_or(Error::InvalidStateIndex {
                index: state,
                count: self.actions.len(),
            })
    }

    #[inline]
    pub(crate) fn action_unchecked(&self, state: usize) -> usize {
        self.actions[state] as usize
    }

    /// Agent `agent`'s projection of the joint action at `state`.
    pub fn agent_action(&self, state: usize, agent: usize) -> Result<usize> {
        let joint = self.action(state)?;
        let per_agent = (self.action_count as f64).sqrt().round() as usize;
        if agent >= N_AGENTS {
            return Err(Error::InvalidAgent {
                agent,
                n_agents: N_AGENTS,
            });
        }
        Ok(JointAction::from_index(joint, N_AGENTS, per_agent).actions()[agent])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 2 * self.actions.len());
        buf.extend_from_slice(POLICY_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.action_count as u32).to_le_bytes());
        buf.extend_from_slice(&(self.actions.len() as u64).to_le_bytes());
        for a in &self.actions {
            buf.extend_from_slice(&a.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(&bytes, "policy table");
        if r.take(4)? != POLICY_MAGIC {
            return Err(Error::format("policy table", "bad magic"));
        }
        if r.u32()? != FORMAT_VERSION {
            return Err(Error::format("policy table", "unsupported version"));
        }
        let action_count = r.u32()? as usize;
        let n = r.u64()? as usize;
        if r.remaining() != 2 * n {
            return Err(Error::format("policy table", "truncated"));
        }
        let actions = (0..n)
            .map(|_| r.take(2).map(|b| u16::from_le_bytes([b[0], b[1]])))
            .collect::<Result<Vec<_>>>()?;
        if actions.iter().any(|&a| a as usize >= action_count) {
            return Err(Error::format("policy table", "action out of range"));
        }
        Ok(PolicyTable { actions, action_count })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        ByteReader { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.what, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    ValueIteration,
    QLearning,
}

/// Step size as a function of the visit count `n` of the updated pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LearningRate {
    /// `1 / (1 + n)^omega`
    Polynomial { omega: f64 },
    /// `1 / (1 + (1 - gamma) n)`
    RescaledLinear,
}

impl LearningRate {
    #[inline]
    fn at(&self, visits: u32, gamma: f64) -> f64 {
        match *self {
            LearningRate::Polynomial { omega } => (1.0 + visits as f64).powf(-omega),
            LearningRate::RescaledLinear => 1.0 / (1.0 + (1.0 - gamma) * visits as f64),
        }
    }
}

/// Epsilon-greedy exploration, decaying linearly from `start` to `end` over
/// `decay_episodes` episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exploration {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: u64,
}

impl Exploration {
    fn epsilon(&self, episode: u64) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    #[serde(default = "default_vi_tol")]
    pub vi_tolerance: f64,
    #[serde(default)]
    pub ql_episodes: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: LearningRate,
    #[serde(default = "default_exploration")]
    pub exploration: Exploration,
    #[serde(default)]
    pub seed: u64,
}

fn default_vi_tol() -> f64 {
    1e-9
}
fn default_lr() -> LearningRate {
    LearningRate::Polynomial { omega: 0.6 }
}
fn default_exploration() -> Exploration {
    Exploration {
        start: 1.0,
        end: 0.1,
        decay_episodes: 0,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::ValueIteration,
            vi_tolerance: default_vi_tol(),
            ql_episodes: 0,
            learning_rate: default_lr(),
            exploration: default_exploration(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vi_tolerance > 0.0) {
            return Err(Error::InvalidConfig("vi_tolerance must be > 0".into()));
        }
        if let LearningRate::Polynomial { omega } = self.learning_rate {
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(Error::InvalidConfig("learning-rate exponent must be in (0, 1]".into()));
            }
        }
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(Error::InvalidConfig(
                "exploration must satisfy 0 <= end <= start <= 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("discount {gamma} not in (0, 1)")));
    }
    Ok(())
}

/// One Bellman backup of `q` into `out`, given the state values of `q`.
fn bellman_backup<M: TabularMdp>(env: &M, v: &[f64], gamma: f64, out: &mut [f64]) {
    let actions = env.action_count();
    out.par_chunks_mut(actions).enumerate().for_each(|(s, row)| {
        if env.is_terminal(s) {
            row.fill(0.0);
            return;
        }
        for (a, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            env.for_each_successor(s, a, &mut |next, p, r| {
                let cont = next.map_or(0.0, |n| v[n]);
                acc += p * (r + gamma * cont);
            });
            *slot = acc;
        }
    });
}

/// Sup-norm distance between `q` and its Bellman image.
pub fn bellman_residual<M: TabularMdp>(env: &M, q: &QTable) -> Result<f64> {
    let n = env
        .state_count()
        .ok_or_else(|| Error::Unsupported("value iteration needs an enumerable state space".into()))?;
    if n != q.state_count() || env.action_count() != q.action_count() {
        return Err(Error::InvalidInput("Q table shape does not match the environment".into()));
    }
    let v = q.state_values();
    let mut next = vec![0.0; q.values.len()];
    bellman_backup(env, &v, q.gamma, &mut next);
    Ok(sup_diff(&next, &q.values))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| (x - y).abs())
        .reduce(|| 0.0, f64::max)
}

/// Synchronous value iteration until successive tables differ by at most
/// `tol`; the returned table then has Bellman residual at most `gamma * tol`.
pub fn value_iteration<M: TabularMdp>(env: &M, gamma: f64, tol: f64) -> Result<QTable> {
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be > 0".into()));
    }
    let n = env
        .state_count()
        .ok_or_else(|| Error::Unsupported("value iteration needs an enumerable state space".into()))?;
    let actions = env.action_count();
    let mut cur = vec![0.0; n * actions];
    let mut next = vec![0.0; n * actions];
    loop {
        let v: Vec<f64> = cur.par_chunks(actions).map(row_max).collect();
        bellman_backup(env, &v, gamma, &mut next);
        let diff = sup_diff(&next, &cur);
        std::mem::swap(&mut cur, &mut next);
        if diff <= tol {
            break;
        }
    }
    QTable::from_values(cur, n, actions, gamma)
}

/// Result of a Q-learning run: the table and per-pair update counts.
#[derive(Clone, Debug)]
pub struct QLearning {
    pub table: QTable,
    pub pair_visits: Vec<u32>,
}

impl QLearning {
    pub fn state_visits(&self) -> Vec<u64> {
        let a = self.table.action_count();
        self.pair_visits
            .chunks(a)
            .map(|row| row.iter().map(|&v| v as u64).sum())
            .collect()
    }
}

/// Tabular joint Q-learning with epsilon-greedy exploration. Episodes start
/// from uniformly random states and end on a tag or the step cap.
pub fn q_learning(env: &ParticleTag, gamma: f64, cfg: &TrainConfig) -> Result<QLearning> {
    check_gamma(gamma)?;
    cfg.validate()?;
    let n = env.n_states();
    let actions = crate::env::JOINT_ACTIONS;
    let mut q = vec![0.0f64; n * actions];
    let mut visits = vec![0u32; n * actions];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cap = env.config().step_cap;

    for episode in 0..cfg.ql_episodes {
        let eps = cfg.exploration.epsilon(episode);
        let mut s = rng.random_range(0..n);
        let mut coords = env.coords_of(s);
        for _ in 0..cap {
            let row = &q[s * actions..(s + 1) * actions];
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..actions)
            } else {
                row_argmax(row)
            };
            let (next, reward, terminal) = env.step_coords(&coords, a, &mut rng);
            let target = if terminal {
                reward
            } else {
                let ns = env.index_of(&next);
                reward + gamma * row_max(&q[ns * actions..(ns + 1) * actions])
            };
            let k = s * actions + a;
            let lr = cfg.learning_rate.at(visits[k], gamma);
            visits[k] = visits[k].saturating_add(1);
            q[k] += lr * (target - q[k]);
            if terminal {
                break;
            }
            coords = next;
            s = env.index_of(&coords);
        }
    }

    let table = QTable::from_values(q, n, actions, gamma)?.with_grid(env);
    Ok(QLearning {
        table,
        pair_visits: visits,
    })
}

/// Trains a table in the configured mode.
pub fn train(env: &ParticleTag, gamma: f64, cfg: &TrainConfig) -> Result<QTable> {
    match cfg.mode {
        TrainMode::ValueIteration => Ok(value_iteration(env, gamma, cfg.vi_tolerance)?.with_grid(env)),
        TrainMode::QLearning => Ok(q_learning(env, gamma, cfg)?.table),
    }
}

/// `V*(x)` for a grid state.
pub fn v_star(env: &ParticleTag, q: &QTable, x: &GlobalState) -> Result<f64> {
    q.v_star(env.state_index(x)?)
}

/// `argmax_U Q(x, U)` for a grid state.
pub fn pi_star(env: &ParticleTag, q: &QTable, x: &GlobalState) -> Result<JointAction> {
    let a = q.pi_star(env.state_index(x)?)?;
    Ok(JointAction::from_index(a, N_AGENTS, MOVES_PER_AGENT))
}

pub fn suboptimality_gap(q: &QTable) -> f64 {
    q.suboptimality_gap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    /// One state looping to itself with a fixed reward.
    struct SelfLoop {
        reward: f64,
        absorbing: bool,
    }

    impl TabularMdp for SelfLoop {
        fn state_count(&self) -> Option<usize> {
            Some(1)
        }
        fn action_count(&self) -> usize {
            2
        }
        fn is_terminal(&self, _s: usize) -> bool {
            self.absorbing
        }
        fn for_each_successor(&self, _s: usize, _a: usize, f: &mut dyn FnMut(Option<usize>, f64, f64)) {
            f(Some(0), 1.0, self.reward);
        }
    }

    struct Unbounded;

    impl TabularMdp for Unbounded {
        fn state_count(&self) -> Option<usize> {
            None
        }
        fn action_count(&self) -> usize {
            1
        }
        fn for_each_successor(&self, _s: usize, _a: usize, _f: &mut dyn FnMut(Option<usize>, f64, f64)) {}
    }

    #[test]
    fn absorbing_state_has_zero_values() {
        let q = value_iteration(
            &SelfLoop {
                reward: 0.0,
                absorbing: true,
            },
            0.9,
            1e-12,
        )
        .unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometric_self_loop() {
        let q = value_iteration(
            &SelfLoop {
                reward: 1.0,
                absorbing: false,
            },
            0.5,
            1e-12,
        )
        .unwrap();
        assert!((q.v_star(0).unwrap() - 2.0).abs() < 1e-11);
    }

    #[test]
    fn non_enumerable_is_unsupported() {
        assert!(matches!(value_iteration(&Unbounded, 0.9, 1e-6), Err(Error::Unsupported(_))));
    }

    #[test]
    fn row_helpers() {
        let q = QTable::from_values(vec![1.0, 2.5, -1.0], 1, 3, 0.9).unwrap();
        assert_eq!(q.v_star(0).unwrap(), 2.5);
        assert_eq!(q.pi_star(0).unwrap(), 1);
        let z = QTable::zeros(4, 25, 0.9);
        assert_eq!(z.v_star(3).unwrap(), 0.0);
        assert_eq!(z.pi_star(3).unwrap(), 0);
        let inc = QTable::from_values((0..25).map(|i| i as f64).collect(), 1, 25, 0.9).unwrap();
        assert_eq!(inc.pi_star(0).unwrap(), 24);
        assert!(matches!(z.v_star(4), Err(Error::InvalidStateIndex { .. })));
        assert!(matches!(z.pi_star(9), Err(Error::InvalidStateIndex { .. })));
    }

    #[test]
    fn gap_of_indifferent_table_is_zero() {
        let q = QTable::from_values(vec![0.3; 50], 2, 25, 0.9).unwrap();
        assert_eq!(q.suboptimality_gap(), 0.0);
    }

    #[test]
    fn zero_episode_q_learning_returns_zeros() {
        let env = ParticleTag::new(EnvConfig::new(3)).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::QLearning,
            ql_episodes: 0,
            ..TrainConfig::default()
        };
        let out = q_learning(&env, 0.97, &cfg).unwrap();
        assert!(out.table.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.table.state_count(), 729);
    }

    #[test]
    fn policy_scaling_invariance() {
        let env = ParticleTag::new(EnvConfig::new(3)).unwrap();
        let q = value_iteration(&env, 0.9, 1e-8).unwrap();
        let scaled = QTable::from_values(q.values().iter().map(|v| v * 3.5).collect(), q.state_count(), 25, 0.9).unwrap();
        assert_eq!(PolicyTable::from_q(&q), PolicyTable::from_q(&scaled));
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let env = ParticleTag::new(EnvConfig::new(3)).unwrap();
        let q = value_iteration(&env, 0.97, 1e-6).unwrap().with_grid(&env);
        let path = dir.path().join("q.bin");
        q.save(&path).unwrap();
        let back = QTable::load(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.n_agents, 2);
        assert!(q.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(q, back);

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"ETMQ");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 4 + 8 + 8 + 8 * 729 * 25);

        let p = PolicyTable::from_q(&q);
        let pp = dir.path().join("policy.bin");
        p.save(&pp).unwrap();
        assert_eq!(PolicyTable::load(&pp).unwrap(), p);
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(QTable::load(&path), Err(Error::Format { .. })));
        assert!(matches!(
            QTable::load(&dir.path().join("absent.bin")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn agent_projection() {
        let p = PolicyTable::constant(3, 25, 2 * 5 + 4);
        assert_eq!(p.agent_action(1, 0).unwrap(), 2);
        assert_eq!(p.agent_action(1, 1).unwrap(), 4);
        assert!(p.agent_action(1, 2).is_err());
    }
}
