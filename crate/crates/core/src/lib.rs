//! Tabular multi-agent planning with self-triggered communication.
//!
//! The crate covers a two-predator pursuit game, exact and sampled planning,
//! a robustness surrogate that says how far agents may drift before they must
//! share their position, a support-vector model of that surrogate with
//! scenario risk bounds, and an executor that plays games under the resulting
//! triggers.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod exec;
pub mod harness;
pub mod planner;
pub mod risk;
pub mod surrogate;
pub mod svr;

pub use env::{
    AgentBlockMap, EnvConfig, GlobalState, JointAction, Move, ParticleTag, Successor, TabularMdp, TransitionOutcome,
};
pub use error::{Error, Result};
pub use exec::{
    check_proposition, corollary1_delta, run_batch, run_episode, run_episode_traced, theorem1_bound, Batch,
    BatchSummary, EpisodeRecord, Start, Trace, TriggerKind, TriggerPolicy,
};
pub use planner::{q_learning, train, value_iteration, PolicyTable, QTable, QTableMeta, TrainConfig, TrainMode};
pub use risk::{epsilon_bounds, RiskBounds};
pub use surrogate::{gamma_alpha, gamma_alpha_table, sample_surrogates, SampleSet, SurrogateSample};
pub use svr::{fit_svr, Kernel, SvrModel};
