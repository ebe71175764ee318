//! Exact robustness surrogate: the largest sup-norm radius around a state
//! inside which the action chosen at the centre stays `alpha`-close to
//! optimal everywhere.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{GlobalState, ParticleTag, STATE_DIM};
use crate::error::{Error, Result};
use crate::planner::{PolicyTable, QTable};

/// Labelled training datum `(x, Gamma_alpha(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSample {
    pub x: GlobalState,
    pub y: u32,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<SurrogateSample>,
    pub alpha: f64,
    pub source_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    x1: i32,
    x2: i32,
    x3: i32,
    x4: i32,
    x5: i32,
    x6: i32,
    gamma: u32,
    alpha: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y as f64).collect()
    }

    pub fn states(&self) -> Vec<GlobalState> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            let c = s.x.coords();
            if c.len() != STATE_DIM {
                return Err(Error::DimensionMismatch {
                    expected: STATE_DIM,
                    found: c.len(),
                });
            }
            w.serialize(SampleRow {
                x1: c[0],
                x2: c[1],
                x3: c[2],
                x4: c[3],
                x5: c[4],
                x6: c[5],
                gamma: s.y,
                alpha: s.alpha,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a sample CSV; `source_seed` is not stored in the file.
    pub fn read_csv(path: &Path, source_seed: u64) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let expected = ["x1", "x2", "x3", "x4", "x5", "x6", "gamma", "alpha"];
        if r.headers()?.iter().ne(expected) {
            return Err(Error::format("sample CSV", "unexpected header"));
        }
        let mut samples = Vec::new();
        for row in r.deserialize::<SampleRow>() {
            let row = row?;
            samples.push(SurrogateSample {
                x: GlobalState::from([row.x1, row.x2, row.x3, row.x4, row.x5, row.x6]),
                y: row.gamma,
                alpha: row.alpha,
            });
        }
        let alpha = samples.first().map_or(0.0, |s| s.alpha);
        if samples.iter().any(|s| s.alpha != alpha) {
            return Err(Error::format("sample CSV", "mixed alpha values"));
        }
        Ok(SampleSet {
            samples,
            alpha,
            source_seed,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("sensitivity {alpha} must be finite and >= 0")));
    }
    Ok(())
}

fn check_tables(env: &ParticleTag, q: &QTable, policy: &PolicyTable) -> Result<()> {
    if q.state_count() != env.n_states() || policy.state_count() != env.n_states() {
        return Err(Error::InvalidInput("tables do not match the environment".into()));
    }
    Ok(())
}

/// Calls `f` on the index of every in-bounds state whose sup distance to
/// `center` is exactly `d`; stops early when `f` returns `false`.
fn for_each_in_shell(env: &ParticleTag, center: &[i32; STATE_DIM], d: i32, mut f: impl FnMut(usize) -> bool) {
    let w = env.width() as i32;
    let lo: [i32; STATE_DIM] = std::array::from_fn(|k| (center[k] - d).max(0));
    let hi: [i32; STATE_DIM] = std::array::from_fn(|k| (center[k] + d).min(w - 1));
    let mut cur = lo;
    loop {
        let on_shell = (0..STATE_DIM).any(|k| (cur[k] - center[k]).abs() == d);
        if on_shell && !f(env.index_of(&cur)) {
            return;
        }
        // odometer increment, last coordinate fastest
        let mut k = STATE_DIM;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if cur[k] < hi[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = lo[k];
        }
    }
}

/// In-bounds states at sup distance exactly `d` from `x`, lexicographic order.
pub fn shell(env: &ParticleTag, x: &GlobalState, d: u32) -> Result<Vec<GlobalState>> {
    if d == 0 {
        return Err(Error::InvalidInput("shell radius must be >= 1".into()));
    }
    env.validate_state(x)?;
    let c: [i32; STATE_DIM] = x.coords().try_into().expect("validated");
    let mut out = Vec::new();
    for_each_in_shell(env, &c, d as i32, |i| {
        out.push(env.state_at(i).expect("in bounds"));
        true
    });
    Ok(out)
}

#[inline]
fn violates(q: &QTable, state: usize, action: usize, alpha: f64) -> bool {
    let row = q.row_unchecked(state);
    let v = crate::planner::row_max(row);
    row[action] < v - alpha
}

/// Exact `Gamma_alpha(x)` by expanding shells `d = 1, 2, ...` until one holds
/// a state where the centre's action is more than `alpha` worse than optimal;
/// returns `d - 1`, or the arena diameter when no shell violates.
pub fn gamma_alpha(env: &ParticleTag, x: &GlobalState, alpha: f64, q: &QTable, policy: &PolicyTable) -> Result<u32> {
    check_alpha(alpha)?;
    check_tables(env, q, policy)?;
    let s = env.state_index(x)?;
    Ok(gamma_alpha_index(env, s, alpha, q, policy))
}

pub(crate) fn gamma_alpha_index(env: &ParticleTag, s: usize, alpha: f64, q: &QTable, policy: &PolicyTable) -> u32 {
    let center = env.coords_of(s);
    let action = policy.action_unchecked(s);
    let diameter = env.diameter();
    for d in 1..=diameter {
        let mut violated = false;
        for_each_in_shell(env, &center, d as i32, |i| {
            violated = violates(q, i, action, alpha);
            !violated
        });
        if violated {
            return d - 1;
        }
    }
    diameter
}

/// `Gamma_alpha` for every state at once. For each joint action the sup-norm
/// distance to the nearest violating state is computed with a separable
/// distance transform; the surrogate is that distance minus one, capped at the
/// diameter.
pub fn gamma_alpha_table(env: &ParticleTag, alpha: f64, q: &QTable, policy: &PolicyTable) -> Result<Vec<u32>> {
    check_alpha(alpha)?;
    check_tables(env, q, policy)?;
    let n = env.n_states();
    let w = env.width() as usize;
    let diameter = env.diameter();
    let far = u8::MAX;

    let per_action: Vec<Vec<(usize, u32)>> = (0..q.action_count())
        .into_par_iter()
        .map(|action| {
            let users: Vec<usize> = (0..n).filter(|&s| policy.action_unchecked(s) == action).collect();
            if users.is_empty() {
                return Vec::new();
            }
            let mut dist: Vec<u8> = (0..n)
                .map(|s| if violates(q, s, action, alpha) { 0 } else { far })
                .collect();
            let mut line = vec![0u8; w];
            for k in 0..STATE_DIM {
                let stride = w.pow((STATE_DIM - 1 - k) as u32);
                for base in 0..n {
                    if !(base / stride).is_multiple_of(w) {
                        continue;
                    }
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = dist[base + i * stride];
                    }
                    for i in 0..w {
                        let best = (0..w)
                            .map(|j| line[j].max(i.abs_diff(j) as u8))
                            .min()
                            .unwrap_or(far);
                        dist[base + i * stride] = best;
                    }
                }
            }
            users
                .into_iter()
                .map(|s| {
                    let g = if dist[s] == far {
                        diameter
                    } else {
                        (dist[s] as u32 - 1).min(diameter)
                    };
                    (s, g)
                })
                .collect()
        })
        .collect();

    let mut out = vec![0u32; n];
    for (s, g) in per_action.into_iter().flatten() {
        out[s] = g;
    }
    Ok(out)
}

/// Uniformly samples `size` distinct states (without replacement) and labels
/// each with its exact surrogate value.
pub fn sample_surrogates(
    env: &ParticleTag,
    alpha: f64,
    size: usize,
    seed: u64,
    q: &QTable,
    policy: &PolicyTable,
) -> Result<SampleSet> {
    check_alpha(alpha)?;
    check_tables(env, q, policy)?;
    let n = env.n_states();
    if size == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    if size > n {
        return Err(Error::SampleTooLarge {
            requested: size,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, n, size).into_vec();
    let samples = picked
        .par_iter()
        .map(|&s| SurrogateSample {
            x: env.state_at(s).expect("sampled index in range"),
            y: gamma_alpha_index(env, s, alpha, q, policy),
            alpha,
        })
        .collect();
    Ok(SampleSet {
        samples,
        alpha,
        source_seed: seed,
    })
}

/// Writes a sample set next to its parent directory, creating it if needed.
pub fn write_samples(set: &SampleSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    set.write_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::planner::value_iteration;

    fn env(w: u32) -> ParticleTag {
        ParticleTag::new(EnvConfig::new(w)).unwrap()
    }

    #[test]
    fn shell_sizes() {
        let e = env(10);
        let interior = GlobalState::from([5; 6]);
        assert_eq!(shell(&e, &interior, 1).unwrap().len(), 728);
        let corner = GlobalState::from([0; 6]);
        assert_eq!(shell(&e, &corner, 1).unwrap().len(), 63);
        assert!(shell(&e, &corner, 0).is_err());
    }

    #[test]
    fn shell_members_are_distinct_and_exact() {
        let e = env(5);
        let x = GlobalState::from([1, 4, 2, 0, 3, 3]);
        let s = shell(&e, &x, 2).unwrap();
        let mut sorted = s.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
        assert!(s
            .iter()
            .all(|y| crate::env::sup_distance(&x, y).unwrap() == 2));
    }

    #[test]
    fn large_alpha_gives_diameter() {
        let e = env(3);
        let q = value_iteration(&e, 0.97, 1e-8).unwrap();
        let p = PolicyTable::from_q(&q);
        let iota = q.suboptimality_gap();
        let x = GlobalState::from([0, 1, 2, 2, 1, 0]);
        assert_eq!(gamma_alpha(&e, &x, iota, &q, &p).unwrap(), 2);
        assert_eq!(gamma_alpha(&e, &x, iota + 1.0, &q, &p).unwrap(), 2);
    }

    #[test]
    fn immediate_violation_gives_zero() {
        // Q row favouring action 0 at the centre but penalising it at every
        // neighbour.
        let e = env(3);
        let n = e.n_states();
        let center = GlobalState::from([1; 6]);
        let c = e.state_index(&center).unwrap();
        let mut values = vec![0.0; n * 25];
        for s in 0..n {
            if s == c {
                values[s * 25] = 1.0;
            } else {
                values[s * 25 + 1] = 1.0;
            }
        }
        let q = QTable::from_values(values, n, 25, 0.9).unwrap();
        let p = PolicyTable::from_q(&q);
        assert_eq!(gamma_alpha(&e, &center, 0.5, &q, &p).unwrap(), 0);
        assert_eq!(gamma_alpha(&e, &center, 1.0, &q, &p).unwrap(), 2);
    }

    #[test]
    fn negative_alpha_rejected() {
        let e = env(3);
        let q = QTable::zeros(e.n_states(), 25, 0.9);
        let p = PolicyTable::from_q(&q);
        assert!(gamma_alpha(&e, &GlobalState::from([0; 6]), -0.1, &q, &p).is_err());
    }

    #[test]
    fn table_route_matches_shell_route() {
        let e = env(3);
        let q = value_iteration(&e, 0.97, 1e-8).unwrap();
        let p = PolicyTable::from_q(&q);
        for alpha in [0.0, 0.05, 0.2, 0.5] {
            let table = gamma_alpha_table(&e, alpha, &q, &p).unwrap();
            for (s, &g) in table.iter().enumerate() {
                assert_eq!(g, gamma_alpha_index(&e, s, alpha, &q, &p), "alpha {alpha} state {s}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_exhaustive() {
        let e = env(3);
        let q = value_iteration(&e, 0.97, 1e-8).unwrap();
        let p = PolicyTable::from_q(&q);
        let a = sample_surrogates(&e, 0.2, 100, 7, &q, &p).unwrap();
        let b = sample_surrogates(&e, 0.2, 100, 7, &q, &p).unwrap();
        assert_eq!(a, b);
        let all = sample_surrogates(&e, 0.2, 729, 1, &q, &p).unwrap();
        let mut xs: Vec<_> = all.states();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 729);
        assert!(matches!(
            sample_surrogates(&e, 0.2, 730, 1, &q, &p),
            Err(Error::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let e = env(3);
        let q = value_iteration(&e, 0.97, 1e-8).unwrap();
        let p = PolicyTable::from_q(&q);
        let set = sample_surrogates(&e, 0.3, 50, 3, &q, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        set.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,x6,gamma,alpha\n"));
        assert_eq!(SampleSet::read_csv(&path, 3).unwrap(), set);
    }
}
