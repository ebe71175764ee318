//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub const MOVES: [(i32, i32); 5] = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)];

fn clip(v: i32, w: i32) -> i32 {
    v.clamp(0, w - 1)
}

/// Successors of one state and joint action, written straight from the game
/// rules: `(next or None for the absorbing tag, probability, reward)`.
pub fn rules(w: i32, x: [i32; 6], a1: usize, a2: usize) -> Vec<(Option<[i32; 6]>, f64, f64)> {
    let (p1, p2, prey) = ((x[0], x[1]), (x[2], x[3]), (x[4], x[5]));
    let n1 = (clip(p1.0 + MOVES[a1].0, w), clip(p1.1 + MOVES[a1].1, w));
    let n2 = (clip(p2.0 + MOVES[a2].0, w), clip(p2.1 + MOVES[a2].1, w));
    let adjacent = |p: (i32, i32)| (p.0 - prey.0).abs() + (p.1 - prey.1).abs() == 1;
    if adjacent(p1) && adjacent(p2) && n1 == prey && n2 == prey {
        return vec![(None, 1.0, 1.0)];
    }
    let r = if n1 == n2 { -1.0 } else { 0.0 };
    let mut prey_moves = Vec::new();
    for dx in -1..=1 {
        for dy in -1..=1 {
            if (dx, dy) == (0, 0) {
                continue;
            }
            let (qx, qy) = (prey.0 + dx, prey.1 + dy);
            if (0..w).contains(&qx) && (0..w).contains(&qy) {
                prey_moves.push((qx, qy));
            }
        }
    }
    let p = 1.0 / prey_moves.len() as f64;
    prey_moves
        .into_iter()
        .map(|(qx, qy)| (Some([n1.0, n1.1, n2.0, n2.1, qx, qy]), p, r))
        .collect()
}

pub fn index(w: i32, x: &[i32]) -> usize {
    x.iter().fold(0usize, |acc, &c| acc * w as usize + c as usize)
}

pub fn coords(w: i32, mut i: usize) -> [i32; 6] {
    let mut out = [0; 6];
    for k in (0..6).rev() {
        out[k] = (i % w as usize) as i32;
        i /= w as usize;
    }
    out
}

/// Plain synchronous value iteration over [`rules`], run to a fixed number of
/// sweeps; returns `Q` row-major with 25 joint actions.
pub fn naive_value_iteration(w: i32, gamma: f64, sweeps: usize) -> Vec<f64> {
    let n = (w as usize).pow(6);
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * 25];
    type Outcomes = Vec<(Option<usize>, f64, f64)>;
    let model: Vec<Vec<Outcomes>> = (0..n)
        .map(|s| {
            let x = coords(w, s);
            (0..25)
                .map(|a| {
                    rules(w, x, a / 5, a % 5)
                        .into_iter()
                        .map(|(nx, p, r)| (nx.map(|y| index(w, &y)), p, r))
                        .collect()
                })
                .collect()
        })
        .collect();
    for _ in 0..sweeps {
        for s in 0..n {
            for a in 0..25 {
                q[s * 25 + a] = model[s][a]
                    .iter()
                    .map(|&(nx, p, r)| p * (r + gamma * nx.map_or(0.0, |t| v[t])))
                    .sum();
            }
        }
        for s in 0..n {
            v[s] = q[s * 25..(s + 1) * 25].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    q
}

/// Largest `d <= w - 1` such that every state within sup-distance `d` of
/// `x` keeps `Q(y, a) >= V(y) - alpha`, found by scanning every state.
pub fn brute_gamma(w: i32, x: &[i32; 6], action: usize, alpha: f64, q: &[f64]) -> u32 {
    let n = (w as usize).pow(6);
    let mut first_bad = u32::MAX;
    for s in 0..n {
        let y = coords(w, s);
        let row = &q[s * 25..(s + 1) * 25];
        let v = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if row[action] < v - alpha {
            let d = x.iter().zip(&y).map(|(a, b)| (a - b).unsigned_abs()).max().unwrap();
            first_bad = first_bad.min(d);
        }
    }
    if first_bad == u32::MAX {
        (w - 1) as u32
    } else {
        (first_bad - 1).min((w - 1) as u32)
    }
}

/// Euclidean projection onto `{(a, b) : a, b in [0, cap]^n, sum a = sum b,
/// sum a + sum b <= 1}`. With multipliers `lambda` (balance) and `mu >= 0`
/// (budget): `a = clip(u - lambda - mu)`, `b = clip(v + lambda - mu)`.
fn project_dual(u: &[f64], v: &[f64], cap: f64) -> (Vec<f64>, Vec<f64>) {
    let at = |lambda: f64, mu: f64| -> (Vec<f64>, Vec<f64>) {
        (
            u.iter().map(|&x| (x - lambda - mu).clamp(0.0, cap)).collect(),
            v.iter().map(|&x| (x + lambda - mu).clamp(0.0, cap)).collect(),
        )
    };
    let spread = u.iter().chain(v).fold(0.0f64, |m, x| m.max(x.abs())) + cap + 1.0;
    let balance = |mu: f64| {
        let (mut lo, mut hi) = (-spread, spread);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let (a, b) = at(mid, mu);
            if a.iter().sum::<f64>() > b.iter().sum::<f64>() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let total = |mu: f64| {
        let (a, b) = at(balance(mu), mu);
        a.iter().sum::<f64>() + b.iter().sum::<f64>()
    };
    if total(0.0) <= 1.0 {
        return at(balance(0.0), 0.0);
    }
    let (mut lo, mut hi) = (0.0, 2.0 * spread);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    at(balance(mu), mu)
}

/// `min_{b, kappa >= 0} kappa + rho sum max(0, |g_i - b| - kappa)`, by
/// enumerating the vertices of this piecewise-linear program.
pub fn best_offset(g: &[f64], rho: f64) -> f64 {
    let cost = |b: f64, k: f64| k + rho * g.iter().map(|&x| ((x - b).abs() - k).max(0.0)).sum::<f64>();
    let mut best = f64::INFINITY;
    for i in 0..g.len() {
        for j in i..g.len() {
            let b = 0.5 * (g[i] + g[j]);
            best = best.min(cost(b, 0.5 * (g[i] - g[j]).abs())).min(cost(g[i], 0.0));
        }
    }
    best
}

/// Brackets the optimum of the tube-regression program
/// `min kappa + tau |w|^2 + rho sum xi` through its dual
/// `max beta.y - beta' K beta / (4 tau)` s.t. `sum beta = 0`,
/// `sum |beta| <= 1`, `|beta_i| <= rho`, solved by restarted accelerated
/// projected gradient on the split `beta = a - b`. Returns
/// `(dual lower bound, primal upper bound)`.
pub fn qp_oracle(k: &[Vec<f64>], y: &[f64], rho: f64, tau: f64, max_iterations: usize) -> (f64, f64) {
    let n = y.len();
    let kmul = |beta: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| k[i][j] * beta[j]).sum()).collect() };
    let dual = |beta: &[f64]| {
        let kb = kmul(beta);
        (0..n).map(|i| beta[i] * y[i] - beta[i] * kb[i] / (4.0 * tau)).sum::<f64>()
    };
    // weights w = sum_j beta_j phi(x_j) / (2 tau); tau |w|^2 = beta'K beta / (4 tau)
    let primal = |beta: &[f64]| {
        let kb = kmul(beta);
        let reg: f64 = (0..n).map(|i| beta[i] * kb[i]).sum::<f64>() / (4.0 * tau);
        let g: Vec<f64> = (0..n).map(|i| y[i] - kb[i] / (2.0 * tau)).collect();
        reg + best_offset(&g, rho)
    };
    let lambda_max = {
        let mut v = vec![1.0; n];
        let mut lam = 0.0;
        for _ in 0..1000 {
            let kv = kmul(&v);
            let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
            lam = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = kv.iter().map(|x| x / norm).collect();
        }
        lam
    };
    let step = 1.0 / (lambda_max / tau * 1.05);
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    let (mut ya, mut yb) = (a.clone(), b.clone());
    let mut t = 1.0f64;
    let mut last = f64::NEG_INFINITY;
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 0..max_iterations {
        let beta: Vec<f64> = ya.iter().zip(&yb).map(|(p, q)| p - q).collect();
        let kb = kmul(&beta);
        let g: Vec<f64> = (0..n).map(|i| y[i] - kb[i] / (2.0 * tau)).collect();
        let ua: Vec<f64> = (0..n).map(|i| ya[i] + step * g[i]).collect();
        let ub: Vec<f64> = (0..n).map(|i| yb[i] - step * g[i]).collect();
        let (na, nb) = project_dual(&ua, &ub, rho);
        let nbeta: Vec<f64> = na.iter().zip(&nb).map(|(p, q)| p - q).collect();
        let val = dual(&nbeta);
        lower = lower.max(val);
        if val < last {
            // restart the momentum
            t = 1.0;
            ya = a.clone();
            yb = b.clone();
            last = f64::NEG_INFINITY;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        ya = (0..n).map(|i| na[i] + mom * (na[i] - a[i])).collect();
        yb = (0..n).map(|i| nb[i] + mom * (nb[i] - b[i])).collect();
        t = t_next;
        a = na;
        b = nb;
        last = val;
        if it % 200 == 0 {
            upper = upper.min(primal(&nbeta));
            if upper - lower < 1e-9 {
                break;
            }
        }
    }
    let beta: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
    (lower, upper.min(primal(&beta)))
}

/// A small fitting problem.
pub struct SvrInstance {
    pub xs: Vec<etmarl_core::GlobalState>,
    pub ys: Vec<f64>,
    pub rho: f64,
    pub tau: f64,
    pub bandwidth: f64,
}

/// Deterministic corpus of problems with at most 20 points: integer and
/// real targets, repeated states, tube active and inactive.
pub fn svr_corpus() -> Vec<SvrInstance> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();
    let rhos = [0.02, 0.05, 0.1, 0.3, 1.0];
    let taus = [0.05, 0.2, 1.0];
    let bws = [0.05, 0.2, 1.0];
    for case in 0..45 {
        let n = 2 + case % 19;
        let mut xs: Vec<etmarl_core::GlobalState> = (0..n)
            .map(|_| etmarl_core::GlobalState::new((0..6).map(|_| rng.random_range(0..5)).collect()))
            .collect();
        if case % 7 == 3 && n > 2 {
            xs[1] = xs[0].clone();
        }
        let ys: Vec<f64> = if case % 3 == 0 {
            (0..n).map(|_| rng.random_range(0.0..4.0)).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..5) as f64).collect()
        };
        out.push(SvrInstance {
            xs,
            ys,
            rho: rhos[case % rhos.len()],
            tau: taus[(case / 5) % taus.len()],
            bandwidth: bws[(case / 3) % bws.len()],
        });
    }
    out
}

pub fn gram(xs: &[etmarl_core::GlobalState], bandwidth: f64) -> Vec<Vec<f64>> {
    let k = etmarl_core::Kernel::Rbf { bandwidth };
    let f: Vec<Vec<f64>> = xs.iter().map(|x| x.coords().iter().map(|&c| c as f64).collect()).collect();
    f.iter().map(|a| f.iter().map(|b| k.eval(a, b)).collect()).collect()
}

pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn binom(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn pow(t: &BigRational, e: u64) -> BigRational {
    let mut out = BigRational::one();
    for _ in 0..e {
        out *= t;
    }
    out
}

/// The risk polynomial in exact rational arithmetic, term by term with
/// running powers of `t` and running binomials.
pub fn risk_poly_exact(s: u64, k: u64, beta: &BigRational, t: &BigRational) -> BigRational {
    let c1 = beta / BigRational::from_integer(BigInt::from(2 * s));
    let c2 = beta / BigRational::from_integer(BigInt::from(6 * s));
    let mut out = BigRational::zero();
    let mut power = BigRational::one();
    let mut binom_ik = BigInt::one();
    for i in k..=(4 * s) {
        let term = BigRational::from_integer(binom_ik.clone()) * &power;
        if i < s {
            out -= &c1 * &term;
        } else if i == s {
            out += term;
        } else {
            out -= &c2 * &term;
        }
        power *= t;
        binom_ik = binom_ik * BigInt::from(i + 1) / BigInt::from(i + 1 - k);
    }
    out
}

/// The leading term `C(s, k) t^(s-k)` alone.
pub fn risk_lead_exact(s: u64, k: u64, t: &BigRational) -> BigRational {
    BigRational::from_integer(binom(s, k)) * pow(t, s - k)
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("finite")
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
