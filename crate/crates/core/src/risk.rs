//! Scenario-approach risk bounds for a model that leaves `s*` of `S` samples
//! outside its tube.
//!
//! The bounds come from the two roots in `(0, 1)` of
//!
//! ```text
//! B(t) = C(S,k) t^(S-k) - beta/(2S) sum_{i=k}^{S-1} C(i,k) t^(i-k)
//!                       - beta/(6S) sum_{i=S+1}^{4S} C(i,k) t^(i-k)
//! ```
//!
//! with `k = s*`: `eps_hi = 1 - t_lo` and `eps_lo = max(0, 1 - t_hi)`. Every
//! term is handled in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_POINTS: usize = 20_000;
const BISECTION_TOL: f64 = 1e-10;
const T_MIN: f64 = 1e-6;
const T_MAX: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBounds {
    pub sample_count: usize,
    pub s_star: usize,
    pub beta: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
}

impl RiskBounds {
    pub fn empirical_rate(&self) -> f64 {
        self.s_star as f64 / self.sample_count as f64
    }
}

/// Log-domain pieces of `B(t)` for fixed `(S, k, beta)`.
pub struct RiskPolynomial {
    s: usize,
    k: usize,
    log_lead: f64,
    /// `(exponent, log coefficient)` of every subtracted term.
    tail: Vec<(f64, f64)>,
    /// `(i+1)/(i+1-k)`, the binomial step from term `i` to term `i+1`.
    steps: Vec<f64>,
    /// Index in `tail` where the second sum starts.
    split: usize,
}

/// `ln C(i, k)` for `i = k..=upper`, by the recurrence
/// `C(i+1, k) = C(i, k) (i+1) / (i+1-k)`.
fn log_binomials(k: usize, upper: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(upper + 1 - k);
    let mut acc = 0.0;
    out.push(acc);
    for i in k..upper {
        acc += ((i + 1) as f64).ln() - ((i + 1 - k) as f64).ln();
        out.push(acc);
    }
    out
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl RiskPolynomial {
    pub fn new(s: usize, k: usize, beta: f64) -> Result<Self> {
        if s == 0 || k > s {
            return Err(Error::InvalidInput(format!("need 0 <= s* <= S and S >= 1 (S={s}, s*={k})")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidInput(format!("confidence parameter {beta} not in (0, 1)")));
        }
        let lb = log_binomials(k, 4 * s);
        let sf = s as f64;
        let c1 = (beta / (2.0 * sf)).ln();
        let c2 = (beta / (6.0 * sf)).ln();
        let mut tail = Vec::with_capacity(4 * s);
        for i in k..s {
            tail.push(((i - k) as f64, c1 + lb[i - k]));
        }
        for i in (s + 1)..=(4 * s) {
            tail.push(((i - k) as f64, c2 + lb[i - k]));
        }
        let steps = (k..4 * s).map(|i| (i + 1) as f64 / (i + 1 - k) as f64).collect();
        Ok(RiskPolynomial {
            s,
            k,
            log_lead: lb[s - k],
            split: s - k,
            tail,
            steps,
        })
    }

    /// `(ln of the leading term, ln of the subtracted sum)` at `t`.
    pub fn log_parts(&self, t: f64) -> (f64, f64) {
        let lt = t.ln();
        let lead = self.log_lead + (self.s - self.k) as f64 * lt;
        let (first, second) = self.tail.split_at(self.split);
        let a = self.log_run(first, self.k, t, lt);
        let b = self.log_run(second, self.s + 1, t, lt);
        (lead, log_sum_exp([a, b].into_iter()))
    }

    /// Log of the sum over one run of consecutive tail terms starting at
    /// binomial row `i0`. Only the first term goes through `exp`; the rest
    /// follow by multiplying with `t (i+1)/(i+1-k)`, rescaling to stay finite.
    /// That ratio falls with `i`, so once it is below one and the current term
    /// is negligible, every later term is too.
    fn log_run(&self, run: &[(f64, f64)], i0: usize, t: f64, lt: f64) -> f64 {
        let Some(&(e, c)) = run.first() else {
            return f64::NEG_INFINITY;
        };
        let mut scale = c + e * lt;
        let mut term = 1.0;
        let mut sum = 1.0;
        for &step in &self.steps[i0 - self.k..i0 - self.k + run.len() - 1] {
            let ratio = t * step;
            term *= ratio;
            sum += term;
            if ratio < 1.0 && term < 1e-18 * sum {
                break;
            }
            if sum > 1e250 {
                scale += sum.ln();
                term /= sum;
                sum = 1.0;
            }
        }
        scale + sum.ln()
    }

    /// Same as [`log_parts`](Self::log_parts), with one `exp` per term.
    pub fn log_parts_direct(&self, t: f64) -> (f64, f64) {
        let lt = t.ln();
        let lead = self.log_lead + (self.s - self.k) as f64 * lt;
        let tail = log_sum_exp(self.tail.iter().map(|&(e, c)| c + e * lt));
        (lead, tail)
    }

    /// `ln(lead) - ln(tail)`; positive exactly where `B(t) > 0`.
    pub fn log_ratio(&self, t: f64) -> f64 {
        let (a, b) = self.log_parts(t);
        a - b
    }

    /// `B(t)` itself; overflows for large `S`.
    pub fn value(&self, t: f64) -> f64 {
        let (a, b) = self.log_parts(t);
        if a >= b {
            a.exp() * -(b - a).exp_m1()
        } else {
            -(b.exp() * -(a - b).exp_m1())
        }
    }

    fn bisect(&self, mut lo: f64, mut hi: f64) -> f64 {
        let f_lo = self.log_ratio(lo) > 0.0;
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if (self.log_ratio(mid) > 0.0) == f_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Scan grid concentrated near `t = 1`: `t = 1 - 10^(-u)`.
fn scan_grid() -> Vec<f64> {
    let u_lo = -(1.0 - T_MIN).log10();
    let u_hi = -(1.0 - T_MAX).log10();
    (0..GRID_POINTS)
        .map(|i| {
            let u = u_lo + (u_hi - u_lo) * i as f64 / (GRID_POINTS - 1) as f64;
            1.0 - 10f64.powf(-u)
        })
        .collect()
}

/// Lower and upper risk bounds for `s_star` outliers among `s` samples at
/// confidence `1 - beta`.
pub fn epsilon_bounds(s: usize, s_star: usize, beta: f64) -> Result<RiskBounds> {
    let poly = RiskPolynomial::new(s, s_star, beta)?;
    let done = |eps_lo, eps_hi| RiskBounds {
        sample_count: s,
        s_star,
        beta,
        eps_lo,
        eps_hi,
    };
    if s_star == s {
        return Ok(done(0.0, 1.0));
    }
    let grid = scan_grid();
    let positive: Vec<bool> = grid.par_iter().map(|&t| poly.log_ratio(t) > 0.0).collect();
    let changes: Vec<usize> = (0..grid.len() - 1).filter(|&i| positive[i] != positive[i + 1]).collect();

    let diag = || {
        format!(
            "S={s} s*={s_star} beta={beta}: {} sign changes on the scan grid, B(t_min)>0 is {}, B(t_max)>0 is {}",
            changes.len(),
            positive[0],
            positive[grid.len() - 1]
        )
    };
    match changes.as_slice() {
        [up, down] if !positive[*up] && positive[*down] => {
            let t_lo = poly.bisect(grid[*up], grid[up + 1]);
            let t_hi = poly.bisect(grid[*down], grid[down + 1]);
            Ok(done((1.0 - t_hi).max(0.0), 1.0 - t_lo))
        }
        // the upper root lies at or beyond t = 1
        [up] if !positive[*up] => {
            let t_lo = poly.bisect(grid[*up], grid[up + 1]);
            Ok(done(0.0, 1.0 - t_lo))
        }
        _ => Err(Error::Numerical(diag())),
    }
}
