//! Policy execution under self-triggered state sharing.
//!
//! Every agent keeps its own copy of the last-known joint state. At each step
//! all agents compare their true block with their copy of the previous
//! last-known state and broadcast it when the sup-norm deviation exceeds the
//! trigger threshold evaluated at that previous state. Tests are evaluated
//! simultaneously, then all received blocks are merged, so every copy stays
//! identical. Locally sensed components (the prey) are refreshed every step.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{slice_sup_distance, GlobalState, ParticleTag, MOVES_PER_AGENT, N_AGENTS, PREY_BLOCK as PREY, STATE_DIM};
use crate::error::{Error, Result};
use crate::planner::PolicyTable;
use crate::svr::SvrModel;

type Coords = [i32; STATE_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerKind {
    FullComm,
    Exact,
    Svr,
    Never,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::FullComm => "full-comm",
            TriggerKind::Exact => "exact",
            TriggerKind::Svr => "svr",
            TriggerKind::Never => "never",
        }
    }
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TriggerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-comm" => Ok(TriggerKind::FullComm),
            "exact" => Ok(TriggerKind::Exact),
            "svr" => Ok(TriggerKind::Svr),
            "never" => Ok(TriggerKind::Never),
            other => Err(Error::InvalidInput(format!("unknown trigger kind {other}"))),
        }
    }
}

/// When an agent must broadcast its block.
#[derive(Clone, Debug)]
pub enum TriggerPolicy {
    /// Threshold `-inf`: every agent transmits every step.
    FullComm,
    /// Exact surrogate values, one per state index.
    Exact { alpha: f64, table: Arc<Vec<u32>> },
    /// Learned surrogate, threshold `f(x) - kappa`.
    Svr { alpha: f64, model: Arc<SvrModel> },
    /// Threshold `+inf`: nobody ever transmits.
    Never,
}

impl TriggerPolicy {
    pub fn kind(&self) -> TriggerKind {
        match self {
            TriggerPolicy::FullComm => TriggerKind::FullComm,
            TriggerPolicy::Exact { .. } => TriggerKind::Exact,
            TriggerPolicy::Svr { .. } => TriggerKind::Svr,
            TriggerPolicy::Never => TriggerKind::Never,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            TriggerPolicy::Exact { alpha, .. } | TriggerPolicy::Svr { alpha, .. } => *alpha,
            _ => 0.0,
        }
    }

    /// Threshold evaluated at a last-known state.
    pub fn threshold(&self, env: &ParticleTag, xhat: &GlobalState) -> Result<f64> {
        env.validate_state(xhat)?;
        let c: Coords = xhat.coords().try_into().expect("validated");
        Ok(self.threshold_coords(env, &c))
    }

    fn threshold_coords(&self, env: &ParticleTag, xhat: &Coords) -> f64 {
        match self {
            TriggerPolicy::FullComm => f64::NEG_INFINITY,
            TriggerPolicy::Exact { table, .. } => table[env.index_of(xhat)] as f64,
            TriggerPolicy::Svr { model, .. } => {
                let f: Vec<f64> = xhat.iter().map(|&v| v as f64).collect();
                model.predict_features(&f) - model.kappa
            }
            TriggerPolicy::Never => f64::INFINITY,
        }
    }
}

/// Outcome of one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub game_id: u64,
    pub discounted_return: f64,
    pub length: u32,
    /// Messages sent by each agent.
    pub messages: Vec<u32>,
    /// `(t, agent)` for every broadcast.
    pub triggered_steps: Vec<(u32, u8)>,
}

impl EpisodeRecord {
    pub fn total_messages(&self) -> u32 {
        self.messages.iter().sum()
    }

    pub fn msg_rate(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.total_messages() as f64 / self.length as f64
        }
    }
}

/// Everything seen at one step, for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub t: u32,
    pub state: GlobalState,
    /// Each agent's copy of the previous last-known state.
    pub prev_copies: Vec<GlobalState>,
    /// Each agent's copy after merging this step's messages.
    pub copies: Vec<GlobalState>,
    /// Threshold each agent evaluated on its previous copy.
    pub thresholds: Vec<f64>,
    pub triggered: Vec<bool>,
    pub actions: Vec<usize>,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub steps: Vec<StepTrace>,
}

fn block_of(agent: usize) -> std::ops::Range<usize> {
    2 * agent..2 * agent + 2
}

fn to_state(c: &Coords) -> GlobalState {
    GlobalState::new(c.to_vec())
}

#[allow(clippy::too_many_arguments)]
fn play<R: Rng + ?Sized>(
    env: &ParticleTag,
    policy: &PolicyTable,
    trigger: &TriggerPolicy,
    x0: &Coords,
    rng: &mut R,
    gamma: f64,
    game_id: u64,
    mut trace: Option<&mut Trace>,
) -> EpisodeRecord {
    let cap = env.config().step_cap;
    let mut x = *x0;
    // x_hat_{-1} := x_0, so finite thresholds see no deviation at t = 0
    let mut copies: [Coords; N_AGENTS] = [*x0; N_AGENTS];
    let mut messages = vec![0u32; N_AGENTS];
    let mut triggered_steps = Vec::new();
    let mut ret = 0.0;
    let mut t = 0u32;
    loop {
        let prev = copies;
        let mut thresholds = [0.0; N_AGENTS];
        let mut fired = [false; N_AGENTS];
        for i in 0..N_AGENTS {
            thresholds[i] = trigger.threshold_coords(env, &prev[i]);
            let dev = slice_sup_distance(&x[block_of(i)], &prev[i][block_of(i)]);
            fired[i] = dev as f64 > thresholds[i];
        }
        for copy in copies.iter_mut() {
            for (j, &f) in fired.iter().enumerate() {
                if f {
                    copy[block_of(j)].copy_from_slice(&x[block_of(j)]);
                }
            }
            copy[PREY].copy_from_slice(&x[PREY]);
        }
        for (i, &f) in fired.iter().enumerate() {
            if f {
                messages[i] += 1;
                triggered_steps.push((t, i as u8));
            }
        }
        let mut actions = [0usize; N_AGENTS];
        for (i, a) in actions.iter_mut().enumerate() {
            let joint = policy.action_unchecked(env.index_of(&copies[i]));
            *a = if i == 0 { joint / MOVES_PER_AGENT } else { joint % MOVES_PER_AGENT };
        }
        let joint = actions[0] * MOVES_PER_AGENT + actions[1];
        let (next, reward, terminal) = env.step_coords(&x, joint, rng);
        ret += gamma.powi(t as i32) * reward;
        if let Some(tr) = trace.as_deref_mut() {
            tr.steps.push(StepTrace {
                t,
                state: to_state(&x),
                prev_copies: prev.iter().map(to_state).collect(),
                copies: copies.iter().map(to_state).collect(),
                thresholds: thresholds.to_vec(),
                triggered: fired.to_vec(),
                actions: actions.to_vec(),
                reward,
            });
        }
        t += 1;
        x = next;
        if terminal || t >= cap {
            break;
        }
    }
    EpisodeRecord {
        game_id,
        discounted_return: ret,
        length: t,
        messages,
        triggered_steps,
    }
}

fn check_inputs(env: &ParticleTag, policy: &PolicyTable, trigger: &TriggerPolicy, gamma: f64) -> Result<()> {
    if policy.state_count() != env.n_states() {
        return Err(Error::InvalidInput("policy does not match the environment".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("discount {gamma} not in (0, 1)")));
    }
    if let TriggerPolicy::Exact { table, .. } = trigger {
        if table.len() != env.n_states() {
            return Err(Error::InvalidInput("surrogate table does not match the environment".into()));
        }
    }
    Ok(())
}

/// Plays one game from `x0` until a tag or the step cap.
pub fn run_episode<R: Rng + ?Sized>(
    env: &ParticleTag,
    policy: &PolicyTable,
    trigger: &TriggerPolicy,
    gamma: f64,
    x0: &GlobalState,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    check_inputs(env, policy, trigger, gamma)?;
    env.validate_state(x0)?;
    let c: Coords = x0.coords().try_into().expect("validated");
    Ok(play(env, policy, trigger, &c, rng, gamma, 0, None))
}

/// Like [`run_episode`], also recording every agent's view at every step.
pub fn run_episode_traced<R: Rng + ?Sized>(
    env: &ParticleTag,
    policy: &PolicyTable,
    trigger: &TriggerPolicy,
    gamma: f64,
    x0: &GlobalState,
    rng: &mut R,
) -> Result<(EpisodeRecord, Trace)> {
    check_inputs(env, policy, trigger, gamma)?;
    env.validate_state(x0)?;
    let c: Coords = x0.coords().try_into().expect("validated");
    let mut trace = Trace::default();
    let rec = play(env, policy, trigger, &c, rng, gamma, 0, Some(&mut trace));
    Ok((rec, trace))
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of game `index` under `master`.
pub fn game_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index))
}

/// Across-game statistics; standard deviations are per game (n - 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub games: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_length: f64,
    pub std_length: f64,
    pub mean_msgs: f64,
    pub std_msgs: f64,
    /// Messages per step, `h / g`.
    pub msg_rate: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(records: &[EpisodeRecord]) -> BatchSummary {
    let (mean_return, std_return) = mean_std(records.iter().map(|r| r.discounted_return));
    let (mean_length, std_length) = mean_std(records.iter().map(|r| r.length as f64));
    let (mean_msgs, std_msgs) = mean_std(records.iter().map(|r| r.total_messages() as f64));
    let steps: u64 = records.iter().map(|r| r.length as u64).sum();
    let msgs: u64 = records.iter().map(|r| r.total_messages() as u64).sum();
    BatchSummary {
        games: records.len(),
        mean_return,
        std_return,
        mean_length,
        std_length,
        mean_msgs,
        std_msgs,
        msg_rate: if steps == 0 { 0.0 } else { msgs as f64 / steps as f64 },
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub records: Vec<EpisodeRecord>,
    pub summary: BatchSummary,
}

/// Where games start.
#[derive(Clone, Debug)]
pub enum Start {
    /// Uniformly random state per game.
    Uniform,
    Fixed(GlobalState),
}

/// Plays `n_games` independent games in parallel. Game `g` uses its own
/// generator seeded with [`game_seed`]`(seed, g)`; its start state (when
/// random) is the first draw from that generator.
pub fn run_batch(
    env: &ParticleTag,
    policy: &PolicyTable,
    trigger: &TriggerPolicy,
    gamma: f64,
    n_games: usize,
    seed: u64,
    start: &Start,
) -> Result<Batch> {
    if n_games == 0 {
        return Err(Error::InvalidInput("n_games must be >= 1".into()));
    }
    check_inputs(env, policy, trigger, gamma)?;
    let fixed: Option<Coords> = match start {
        Start::Uniform => None,
        Start::Fixed(x) => {
            env.validate_state(x)?;
            Some(x.coords().try_into().expect("validated"))
        }
    };
    let n_states = env.n_states();
    let records: Vec<EpisodeRecord> = (0..n_games as u64)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(game_seed(seed, g));
            let x0 = fixed.unwrap_or_else(|| env.coords_of(rng.random_range(0..n_states)));
            play(env, policy, trigger, &x0, &mut rng, gamma, g, None)
        })
        .collect();
    let summary = summarize(&records);
    Ok(Batch { records, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    /// Agents hold different last-known states.
    CopiesDiffer,
    /// An agent stayed silent although its deviation exceeded the threshold.
    SilentAboveThreshold { deviation: u32, threshold: f64 },
    /// A copy does not equal the merge of the previous copy and this step's
    /// broadcasts and local measurements.
    BadMerge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub t: u32,
    pub agent: Option<usize>,
    pub kind: ViolationKind,
}

/// Audits a trace: identical copies at every step and, for every silent
/// agent, block deviation from the previous last-known state at most the
/// threshold evaluated there.
pub fn check_proposition(trace: &Trace) -> (bool, Vec<Violation>) {
    let mut out = Vec::new();
    for st in &trace.steps {
        if st.copies.windows(2).any(|w| w[0] != w[1]) || st.prev_copies.windows(2).any(|w| w[0] != w[1]) {
            out.push(Violation {
                t: st.t,
                agent: None,
                kind: ViolationKind::CopiesDiffer,
            });
        }
        let x = st.state.coords();
        for agent in 0..st.triggered.len() {
            let prev = st.prev_copies[agent].coords();
            if !st.triggered[agent] {
                let dev = slice_sup_distance(&x[block_of(agent)], &prev[block_of(agent)]);
                if dev as f64 > st.thresholds[agent] {
                    out.push(Violation {
                        t: st.t,
                        agent: Some(agent),
                        kind: ViolationKind::SilentAboveThreshold {
                            deviation: dev,
                            threshold: st.thresholds[agent],
                        },
                    });
                }
            }
            let mut expected = prev.to_vec();
            for (j, &f) in st.triggered.iter().enumerate() {
                if f {
                    expected[block_of(j)].copy_from_slice(&x[block_of(j)]);
                }
            }
            expected[PREY].copy_from_slice(&x[PREY]);
            if st.copies[agent].coords() != expected.as_slice() {
                out.push(Violation {
                    t: st.t,
                    agent: Some(agent),
                    kind: ViolationKind::BadMerge,
                });
            }
        }
    }
    (out.is_empty(), out)
}

/// Guaranteed return with exact surrogates, with the constant `gamma/(1-gamma)`.
pub fn theorem1_bound(v_star_x0: f64, alpha: f64, gamma: f64) -> f64 {
    v_star_x0 - alpha * gamma / (1.0 - gamma)
}

/// Same bound with the geometric-series constant `1/(1-gamma)`.
pub fn theorem1_bound_geometric(v_star_x0: f64, alpha: f64, gamma: f64) -> f64 {
    v_star_x0 - alpha / (1.0 - gamma)
}

/// Loss bound with a learned surrogate: `(alpha + eps (iota - alpha)) gamma/(1-gamma)`.
pub fn corollary1_delta(alpha: f64, eps_hi: f64, iota: f64, gamma: f64) -> Result<f64> {
    Ok(delta_core(alpha, eps_hi, iota)? * gamma / (1.0 - gamma))
}

/// [`corollary1_delta`] with `1/(1-gamma)` in place of `gamma/(1-gamma)`.
pub fn corollary1_delta_geometric(alpha: f64, eps_hi: f64, iota: f64, gamma: f64) -> Result<f64> {
    Ok(delta_core(alpha, eps_hi, iota)? / (1.0 - gamma))
}

fn delta_core(alpha: f64, eps_hi: f64, iota: f64) -> Result<f64> {
    if !(alpha >= 0.0) || alpha > iota {
        return Err(Error::InvalidInput(format!("need 0 <= alpha <= iota (alpha={alpha}, iota={iota})")));
    }
    if !(0.0..=1.0).contains(&eps_hi) {
        return Err(Error::InvalidInput(format!("risk bound {eps_hi} not in [0, 1]")));
    }
    Ok(alpha + eps_hi * (iota - alpha))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub gamma: f64,
    pub iota: f64,
    pub eps_hi: f64,
    pub theorem1_bound: f64,
    pub corollary1_delta: f64,
}

impl BoundReport {
    pub fn new(v_star_x0: f64, alpha: f64, gamma: f64, iota: f64, eps_hi: f64) -> Result<Self> {
        Ok(BoundReport {
            alpha,
            gamma,
            iota,
            eps_hi,
            theorem1_bound: theorem1_bound(v_star_x0, alpha, gamma),
            corollary1_delta: corollary1_delta(alpha, eps_hi, iota, gamma)?,
        })
    }
}
