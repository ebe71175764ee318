//! Collaborative multi-agent MDP abstraction and the particle-tag benchmark.
//!
//! A joint state is a fixed-length vector of integer grid coordinates. For
//! particle tag the layout is `(pred1_x, pred1_y, pred2_x, pred2_y, prey_x, prey_y)`.
//! Every configuration of the grid is a live state; a tag moves the game into
//! an absorbing terminal marker that lives outside the grid.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint state vector with the sup-norm metric.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlobalState(Vec<i32>);

impl GlobalState {
    pub fn new(coords: Vec<i32>) -> Self {
        GlobalState(coords)
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<i32> {
        self.0
    }
}

impl From<Vec<i32>> for GlobalState {
    fn from(v: Vec<i32>) -> Self {
        GlobalState(v)
    }
}

impl<const N: usize> From<[i32; N]> for GlobalState {
    fn from(v: [i32; N]) -> Self {
        GlobalState(v.to_vec())
    }
}

impl fmt::Display for GlobalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// `max_k |a_k - b_k|`.
pub fn sup_distance(a: &GlobalState, b: &GlobalState) -> Result<u32> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(slice_sup_distance(a.coords(), b.coords()))
}

#[inline]
pub(crate) fn slice_sup_distance(a: &[i32], b: &[i32]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.abs_diff(*y))
        .max()
        .unwrap_or(0)
}

/// Which contiguous slice of the joint state each agent owns and communicates,
/// plus the slices every agent senses locally.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentBlockMap {
    communicated: Vec<Range<usize>>,
    local: Vec<Range<usize>>,
    dim: usize,
}

impl AgentBlockMap {
    pub fn new(communicated: Vec<Range<usize>>, local: Vec<Range<usize>>, dim: usize) -> Result<Self> {
        let mut covered = vec![0u8; dim];
        for r in &communicated {
            if r.end > dim || r.start >= r.end {
                return Err(Error::InvalidConfig(format!("block {r:?} outside state of dimension {dim}")));
            }
            for c in &mut covered[r.clone()] {
                if *c != 0 {
                    return Err(Error::InvalidConfig("communicated blocks overlap".into()));
                }
                *c = 1;
            }
        }
        for r in &local {
            if r.end > dim {
                return Err(Error::InvalidConfig(format!("local block {r:?} outside state")));
            }
            for c in &mut covered[r.clone()] {
                *c = 1;
            }
        }
        if covered.contains(&0) {
            return Err(Error::InvalidConfig("blocks do not cover the state".into()));
        }
        Ok(AgentBlockMap {
            communicated,
            local,
            dim,
        })
    }

    /// Two predators each own an `(x, y)` pair; the prey pair is sensed by both.
    pub fn particle_tag() -> Self {
        AgentBlockMap {
            communicated: vec![0..2, 2..4],
            local: vec![PREY_BLOCK],
            dim: 6,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.communicated.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, agent: usize) -> Result<Range<usize>> {
        self.communicated
            .get(agent)
            .cloned()
            .ok_or(Error::InvalidAgent {
                agent,
                n_agents: self.communicated.len(),
            })
    }

    pub fn local_blocks(&self) -> &[Range<usize>] {
        &self.local
    }
}

/// Sup-norm distance restricted to `agent`'s communicated block.
pub fn block_distance(a: &GlobalState, b: &GlobalState, agent: usize, map: &AgentBlockMap) -> Result<u32> {
    let r = map.block(agent)?;
    if a.dim() != map.dim() || b.dim() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: if a.dim() != map.dim() { a.dim() } else { b.dim() },
        });
    }
    Ok(slice_sup_distance(&a.coords()[r.clone()], &b.coords()[r]))
}

/// Per-predator action set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Wait,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Wait];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }

    /// Grid offset; `up` increases `y`.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, 1),
            Move::Down => (0, -1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
            Move::Wait => (0, 0),
        }
    }
}

/// One action id per agent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointAction(Vec<usize>);

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        JointAction(actions)
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    /// Agent 0 is the most significant digit.
    pub fn index(&self, per_agent: usize) -> usize {
        self.0.iter().fold(0, |acc, &a| acc * per_agent + a)
    }

    pub fn from_index(mut index: usize, n_agents: usize, per_agent: usize) -> Self {
        let mut v = vec![0; n_agents];
        for slot in v.iter_mut().rev() {
            *slot = index % per_agent;
            index /= per_agent;
        }
        JointAction(v)
    }
}

impl From<[Move; 2]> for JointAction {
    fn from(m: [Move; 2]) -> Self {
        JointAction(vec![m[0].index(), m[1].index()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOutcome {
    pub next_state: GlobalState,
    pub reward: f64,
    pub terminal: bool,
}

/// Where a transition lands: a grid state or the absorbing terminal marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Successor {
    State(GlobalState),
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PreyPolicy {
    #[default]
    UniformRandomAdjacent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub arena_width: u32,
    #[serde(default = "default_predators")]
    pub n_predators: u32,
    #[serde(default = "default_step_cap")]
    pub step_cap: u32,
    #[serde(default = "default_true")]
    pub tag_precedence: bool,
    #[serde(default)]
    pub prey_policy: PreyPolicy,
    #[serde(default)]
    pub seed: u64,
}

fn default_predators() -> u32 {
    2
}
fn default_step_cap() -> u32 {
    200
}
fn default_true() -> bool {
    true
}

impl EnvConfig {
    pub fn new(arena_width: u32) -> Self {
        EnvConfig {
            arena_width,
            n_predators: 2,
            step_cap: 200,
            tag_precedence: true,
            prey_policy: PreyPolicy::UniformRandomAdjacent,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arena_width < 3 {
            return Err(Error::InvalidConfig(format!(
                "arena_width must be >= 3, got {}",
                self.arena_width
            )));
        }
        if self.n_predators != 2 {
            return Err(Error::InvalidConfig("only two predators are supported".into()));
        }
        if self.step_cap < 1 {
            return Err(Error::InvalidConfig("step_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// A finite MDP whose states and joint actions are indexed densely.
pub trait TabularMdp: Sync {
    /// `None` when the state space cannot be enumerated.
    fn state_count(&self) -> Option<usize>;

    fn action_count(&self) -> usize;

    /// States whose action values are pinned to zero.
    fn is_terminal(&self, _state: usize) -> bool {
        false
    }

    /// Calls `f(next, probability, reward)` for each outcome; `next == None`
    /// is the absorbing terminal marker.
    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(Option<usize>, f64, f64));
}

pub const STATE_DIM: usize = 6;
pub const N_AGENTS: usize = 2;
pub const MOVES_PER_AGENT: usize = 5;
pub const JOINT_ACTIONS: usize = MOVES_PER_AGENT * MOVES_PER_AGENT;
/// Coordinates of the prey, observed by every agent.
pub const PREY_BLOCK: std::ops::Range<usize> = 4..6;

const PREY_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Predator motion before the prey moves.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PredatorResult {
    p1: (i32, i32),
    p2: (i32, i32),
    reward: f64,
    tagged: bool,
}

/// Two predators, one randomly moving prey, on a `W x W` grid.
#[derive(Clone, Debug)]
pub struct ParticleTag {
    cfg: EnvConfig,
    width: i32,
    blocks: AgentBlockMap,
}

impl ParticleTag {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ParticleTag {
            width: cfg.arena_width as i32,
            cfg,
            blocks: AgentBlockMap::particle_tag(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn width(&self) -> u32 {
        self.cfg.arena_width
    }

    /// Largest sup-norm distance between two states.
    pub fn diameter(&self) -> u32 {
        self.cfg.arena_width - 1
    }

    pub fn blocks(&self) -> &AgentBlockMap {
        &self.blocks
    }

    pub fn n_states(&self) -> usize {
        (self.cfg.arena_width as usize).pow(STATE_DIM as u32)
    }

    pub fn validate_state(&self, x: &GlobalState) -> Result<()> {
        if x.dim() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                found: x.dim(),
            });
        }
        if let Some(&c) = x.coords().iter().find(|&&c| c < 0 || c >= self.width) {
            return Err(Error::OutOfBounds {
                coord: c,
                width: self.cfg.arena_width,
            });
        }
        Ok(())
    }

    pub fn validate_action(&self, a: &JointAction) -> Result<()> {
        if a.actions().len() != N_AGENTS || a.actions().iter().any(|&m| m >= MOVES_PER_AGENT) {
            return Err(Error::InvalidAction(format!("{:?}", a.actions())));
        }
        Ok(())
    }

    /// Lexicographic index, first component most significant.
    pub fn state_index(&self, x: &GlobalState) -> Result<usize> {
        self.validate_state(x)?;
        Ok(self.index_of(x.coords()))
    }

    #[inline]
    pub(crate) fn index_of(&self, c: &[i32]) -> usize {
        let w = self.width as usize;
        c.iter().fold(0, |acc, &v| acc * w + v as usize)
    }

    pub fn state_at(&self, index: usize) -> Result<GlobalState> {
        if index >= self.n_states() {
            return Err(Error::InvalidStateIndex {
                index,
                count: self.n_states(),
            });
        }
        Ok(GlobalState(self.coords_of(index).to_vec()))
    }

    #[inline]
    pub(crate) fn coords_of(&self, mut index: usize) -> [i32; STATE_DIM] {
        let w = self.width as usize;
        let mut c = [0i32; STATE_DIM];
        for slot in c.iter_mut().rev() {
            *slot = (index % w) as i32;
            index /= w;
        }
        c
    }

    /// Every grid state in lexicographic order.
    pub fn enumerate_states(&self) -> impl Iterator<Item = GlobalState> + '_ {
        (0..self.n_states()).map(move |i| GlobalState(self.coords_of(i).to_vec()))
    }

    fn clip(&self, v: i32) -> i32 {
        v.clamp(0, self.width - 1)
    }

    fn move_pred(&self, p: (i32, i32), m: usize) -> (i32, i32) {
        let (dx, dy) = Move::ALL[m].delta();
        (self.clip(p.0 + dx), self.clip(p.1 + dy))
    }

    fn resolve_predators(&self, c: &[i32; STATE_DIM], a1: usize, a2: usize) -> PredatorResult {
        let p1 = (c[0], c[1]);
        let p2 = (c[2], c[3]);
        let prey = (c[4], c[5]);
        let n1 = self.move_pred(p1, a1);
        let n2 = self.move_pred(p2, a2);
        let adjacent = |p: (i32, i32)| (p.0 - prey.0).abs() + (p.1 - prey.1).abs() == 1;
        let both_on_prey = n1 == prey && n2 == prey;
        if self.cfg.tag_precedence && both_on_prey && adjacent(p1) && adjacent(p2) {
            return PredatorResult {
                p1: n1,
                p2: n2,
                reward: 1.0,
                tagged: true,
            };
        }
        let reward = if n1 == n2 { -1.0 } else { 0.0 };
        PredatorResult {
            p1: n1,
            p2: n2,
            reward,
            tagged: false,
        }
    }

    fn prey_moves(&self, prey: (i32, i32)) -> impl Iterator<Item = (i32, i32)> + '_ {
        let w = self.width;
        PREY_OFFSETS
            .iter()
            .map(move |(dx, dy)| (prey.0 + dx, prey.1 + dy))
            .filter(move |&(x, y)| x >= 0 && y >= 0 && x < w && y < w)
    }

    /// Samples one transition. Predators move simultaneously, tag and
    /// collision are scored, then the prey hops to a uniformly chosen
    /// in-bounds neighbour unless the game ended.
    pub fn step<R: Rng + ?Sized>(&self, state: &GlobalState, action: &JointAction, rng: &mut R) -> Result<TransitionOutcome> {
        self.validate_state(state)?;
        self.validate_action(action)?;
        let c: [i32; STATE_DIM] = state.coords().try_into().expect("validated dimension");
        let (next, reward, terminal) = self.step_coords(&c, action.index(MOVES_PER_AGENT), rng);
        Ok(TransitionOutcome {
            next_state: GlobalState(next.to_vec()),
            reward,
            terminal,
        })
    }

    #[inline]
    pub(crate) fn step_coords<R: Rng + ?Sized>(
        &self,
        c: &[i32; STATE_DIM],
        joint: usize,
        rng: &mut R,
    ) -> ([i32; STATE_DIM], f64, bool) {
        let r = self.resolve_predators(c, joint / MOVES_PER_AGENT, joint % MOVES_PER_AGENT);
        let prey = (c[4], c[5]);
        if r.tagged {
            return ([r.p1.0, r.p1.1, r.p2.0, r.p2.1, prey.0, prey.1], r.reward, true);
        }
        let mut options = [(0, 0); 8];
        let mut n = 0;
        for m in self.prey_moves(prey) {
            options[n] = m;
            n += 1;
        }
        let (qx, qy) = options[rng.random_range(0..n)];
        ([r.p1.0, r.p1.1, r.p2.0, r.p2.1, qx, qy], r.reward, false)
    }

    /// Full outcome distribution of `step`.
    pub fn transition_distribution(&self, state: &GlobalState, action: &JointAction) -> Result<Vec<(Successor, f64, f64)>> {
        let s = self.state_index(state)?;
        self.validate_action(action)?;
        let mut out = Vec::with_capacity(8);
        self.for_each_successor(s, action.index(MOVES_PER_AGENT), &mut |next, p, r| {
            let succ = match next {
                Some(i) => Successor::State(GlobalState(self.coords_of(i).to_vec())),
                None => Successor::Terminal,
            };
            out.push((succ, p, r));
        });
        Ok(out)
    }
}

impl TabularMdp for ParticleTag {
    fn state_count(&self) -> Option<usize> {
        Some(self.n_states())
    }

    fn action_count(&self) -> usize {
        JOINT_ACTIONS
    }

    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(Option<usize>, f64, f64)) {
        let c = self.coords_of(state);
        let r = self.resolve_predators(&c, action / MOVES_PER_AGENT, action % MOVES_PER_AGENT);
        if r.tagged {
            f(None, 1.0, r.reward);
            return;
        }
        let prey = (c[4], c[5]);
        let n = self.prey_moves(prey).count();
        let p = 1.0 / n as f64;
        for (qx, qy) in self.prey_moves(prey) {
            let idx = self.index_of(&[r.p1.0, r.p1.1, r.p2.0, r.p2.1, qx, qy]);
            f(Some(idx), p, r.reward);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(w: u32) -> ParticleTag {
        ParticleTag::new(EnvConfig::new(w)).unwrap()
    }

    #[test]
    fn sup_distance_examples() {
        let a = GlobalState::from([1, 2, 3, 4, 5, 6]);
        assert_eq!(sup_distance(&a, &a).unwrap(), 0);
        let z = GlobalState::from([0; 6]);
        let n = GlobalState::from([9; 6]);
        assert_eq!(sup_distance(&z, &n).unwrap(), 9);
        let p = GlobalState::from([1, 1, 2, 2, 3, 3]);
        let q = GlobalState::from([2, 3, 2, 2, 3, 3]);
        assert_eq!(sup_distance(&p, &q).unwrap(), 2);
    }

    #[test]
    fn sup_distance_dimension_mismatch() {
        let a = GlobalState::from([1, 2]);
        let b = GlobalState::from([1, 2, 3]);
        assert!(matches!(sup_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn block_distance_examples() {
        let map = AgentBlockMap::particle_tag();
        let a = GlobalState::from([3, 3, 1, 1, 5, 5]);
        let b = GlobalState::from([3, 3, 7, 7, 0, 0]);
        assert_eq!(block_distance(&a, &b, 0, &map).unwrap(), 0);
        let moved = GlobalState::from([3, 4, 1, 1, 5, 5]);
        assert_eq!(block_distance(&a, &moved, 0, &map).unwrap(), 1);
        assert_eq!(block_distance(&a, &moved, 1, &map).unwrap(), 0);
        assert!(matches!(
            block_distance(&a, &b, 2, &map),
            Err(Error::InvalidAgent { agent: 2, .. })
        ));
    }

    #[test]
    fn block_map_rejects_overlap_and_gaps() {
        assert!(AgentBlockMap::new(vec![0..2, 1..4], vec![PREY_BLOCK], 6).is_err());
        assert!(AgentBlockMap::new(vec![0..2, 2..4], vec![], 6).is_err());
        assert!(AgentBlockMap::new(vec![0..2, 2..4], vec![PREY_BLOCK], 6).is_ok());
    }

    #[test]
    fn tag_example() {
        let e = env(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = GlobalState::from([4, 5, 6, 5, 5, 5]);
        let out = e.step(&x, &[Move::Right, Move::Left].into(), &mut rng).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.terminal);
        assert_eq!(out.next_state, GlobalState::from([5, 5, 5, 5, 5, 5]));
    }

    #[test]
    fn collision_example() {
        let e = env(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = GlobalState::from([4, 5, 6, 5, 0, 0]);
        let out = e.step(&x, &[Move::Right, Move::Left].into(), &mut rng).unwrap();
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminal);
        assert_eq!(&out.next_state.coords()[..4], &[5, 5, 5, 5]);
    }

    #[test]
    fn wall_clipping() {
        let e = env(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = GlobalState::from([0, 0, 5, 5, 9, 9]);
        let out = e.step(&x, &[Move::Left, Move::Wait].into(), &mut rng).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(&out.next_state.coords()[..4], &[0, 0, 5, 5]);
    }

    #[test]
    fn predator_already_on_prey_is_not_a_tag() {
        let e = env(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // pred1 sits on the prey and waits, pred2 steps in
        let x = GlobalState::from([2, 2, 1, 2, 2, 2]);
        let out = e.step(&x, &[Move::Wait, Move::Right].into(), &mut rng).unwrap();
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminal);
    }

    #[test]
    fn enumeration() {
        let e = env(3);
        let all: Vec<_> = e.enumerate_states().collect();
        assert_eq!(all.len(), 729);
        assert_eq!(all[0], GlobalState::from([0; 6]));
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        for (i, s) in all.iter().enumerate() {
            assert_eq!(e.state_index(s).unwrap(), i);
        }
        assert_eq!(env(10).n_states(), 1_000_000);
    }

    #[test]
    fn distribution_support_sizes() {
        let e = env(5);
        let interior = GlobalState::from([0, 0, 4, 4, 2, 2]);
        let a: JointAction = [Move::Wait, Move::Wait].into();
        let d = e.transition_distribution(&interior, &a).unwrap();
        assert_eq!(d.len(), 8);
        assert!(d.iter().all(|(_, p, _)| (*p - 0.125).abs() < 1e-15));
        let corner = GlobalState::from([2, 2, 4, 4, 0, 0]);
        let d = e.transition_distribution(&corner, &a).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|(_, p, _)| (*p - 1.0 / 3.0).abs() < 1e-15));
        let tag = GlobalState::from([1, 2, 3, 2, 2, 2]);
        let d = e.transition_distribution(&tag, &[Move::Right, Move::Left].into()).unwrap();
        assert_eq!(d, vec![(Successor::Terminal, 1.0, 1.0)]);
    }

    #[test]
    fn distributions_sum_to_one_everywhere_at_w3() {
        let e = env(3);
        for s in 0..e.n_states() {
            for a in 0..JOINT_ACTIONS {
                let mut total = 0.0;
                e.for_each_successor(s, a, &mut |_, p, r| {
                    total += p;
                    assert!(r == -1.0 || r == 0.0 || r == 1.0);
                });
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ParticleTag::new(EnvConfig::new(2)).is_err());
        let mut c = EnvConfig::new(5);
        c.step_cap = 0;
        assert!(ParticleTag::new(c).is_err());
    }

    #[test]
    fn joint_action_index_roundtrip() {
        for i in 0..JOINT_ACTIONS {
            let a = JointAction::from_index(i, 2, 5);
            assert_eq!(a.index(5), i);
        }
        assert_eq!(JointAction::from([Move::Down, Move::Wait]).index(5), 5 + 4);
    }

    fn state_strategy(w: i32) -> impl Strategy<Value = GlobalState> {
        proptest::collection::vec(0..w, 6).prop_map(GlobalState::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn sup_distance_is_a_metric(a in state_strategy(10), b in state_strategy(10), c in state_strategy(10)) {
            let ab = sup_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, sup_distance(&b, &a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(sup_distance(&a, &c).unwrap() <= ab + sup_distance(&b, &c).unwrap());
        }
    }
}
