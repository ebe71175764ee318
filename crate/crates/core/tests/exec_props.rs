use std::sync::Arc;

use etmarl_core::exec::{game_seed, Start};
use etmarl_core::planner::value_iteration;
use etmarl_core::svr::{default_bandwidth, tube_params_from_nu_svr};
use etmarl_core::{
    check_proposition, fit_svr, gamma_alpha_table, run_batch, run_episode, run_episode_traced, sample_surrogates,
    EnvConfig, JointAction, Kernel, ParticleTag, PolicyTable, QTable, TriggerPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.97;

fn solved(w: u32) -> (ParticleTag, QTable, PolicyTable) {
    let env = ParticleTag::new(EnvConfig::new(w)).unwrap();
    let q = value_iteration(&env, GAMMA, 1e-9).unwrap();
    let policy = PolicyTable::from_q(&q);
    (env, q, policy)
}

fn exact(env: &ParticleTag, q: &QTable, policy: &PolicyTable, alpha: f64) -> TriggerPolicy {
    TriggerPolicy::Exact {
        alpha,
        table: Arc::new(gamma_alpha_table(env, alpha, q, policy).unwrap()),
    }
}

fn small_svr(env: &ParticleTag, q: &QTable, policy: &PolicyTable, alpha: f64) -> TriggerPolicy {
    let data = sample_surrogates(env, alpha, 250, 3, q, policy).unwrap();
    let (rho, tau) = tube_params_from_nu_svr(0.1, 100.0, data.len());
    let kernel = Kernel::Rbf {
        bandwidth: default_bandwidth(&data.states()),
    };
    TriggerPolicy::Svr {
        alpha,
        model: Arc::new(fit_svr(&data, rho, tau, kernel).unwrap()),
    }
}

#[test]
fn full_communication_replays_the_greedy_rollout() {
    let (env, _, policy) = solved(4);
    for g in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(game_seed(99, g));
        let x0 = env.state_at(rng.random_range(0..env.n_states())).unwrap();
        let mut twin = rng.clone();
        let rec = run_episode(&env, &policy, &TriggerPolicy::FullComm, GAMMA, &x0, &mut rng).unwrap();

        let mut x = x0;
        let (mut ret, mut t) = (0.0, 0);
        loop {
            let a = JointAction::from_index(policy.action(env.state_index(&x).unwrap()).unwrap(), 2, 5);
            let out = env.step(&x, &a, &mut twin).unwrap();
            ret += GAMMA.powi(t) * out.reward;
            t += 1;
            if out.terminal || t as u32 >= env.config().step_cap {
                break;
            }
            x = out.next_state;
        }
        assert_eq!(rec.length, t as u32);
        assert!((rec.discounted_return - ret).abs() < 1e-12);
        assert_eq!(rec.messages, vec![t as u32; 2]);
    }
}

#[test]
fn traces_satisfy_the_invariants_for_every_trigger() {
    let (env, q, policy) = solved(4);
    let triggers = vec![
        TriggerPolicy::FullComm,
        TriggerPolicy::Never,
        exact(&env, &q, &policy, 0.0),
        exact(&env, &q, &policy, 0.3),
        small_svr(&env, &q, &policy, 0.3),
    ];
    for trigger in &triggers {
        let mut steps = 0;
        for g in 0..400u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(game_seed(5, g));
            let x0 = env.state_at(rng.random_range(0..env.n_states())).unwrap();
            let (rec, trace) = run_episode_traced(&env, &policy, trigger, GAMMA, &x0, &mut rng).unwrap();
            let (ok, violations) = check_proposition(&trace);
            assert!(ok, "{:?} game {g}: {violations:?}", trigger.kind());
            assert_eq!(trace.steps.len() as u32, rec.length);
            steps += trace.steps.len();
        }
        assert!(steps > 400);
    }
}

#[test]
fn message_rate_falls_with_alpha_under_shared_seeds() {
    let (env, q, policy) = solved(4);
    let full = run_batch(&env, &policy, &TriggerPolicy::FullComm, GAMMA, 2000, 11, &Start::Uniform).unwrap();
    assert_eq!(full.summary.msg_rate, 2.0);
    let mut last = full.summary.msg_rate;
    for alpha in [0.0, 0.1, 0.2, 0.4, 0.6, 0.9] {
        let b = run_batch(&env, &policy, &exact(&env, &q, &policy, alpha), GAMMA, 2000, 11, &Start::Uniform).unwrap();
        assert!(b.summary.msg_rate <= last, "alpha={alpha}: {} > {last}", b.summary.msg_rate);
        last = b.summary.msg_rate;
    }
    assert!(last < 2.0);
    let never = run_batch(&env, &policy, &TriggerPolicy::Never, GAMMA, 200, 11, &Start::Uniform).unwrap();
    assert_eq!(never.summary.mean_msgs, 0.0);
}

#[test]
fn same_seed_same_batch_regardless_of_size() {
    let (env, q, policy) = solved(3);
    let trigger = exact(&env, &q, &policy, 0.2);
    let small = run_batch(&env, &policy, &trigger, GAMMA, 50, 3, &Start::Uniform).unwrap();
    let large = run_batch(&env, &policy, &trigger, GAMMA, 500, 3, &Start::Uniform).unwrap();
    assert_eq!(small.records[..], large.records[..50]);
}
