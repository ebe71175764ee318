//! Kernel support vector regression with a self-tuned tube.
//!
//! Solves
//!
//! ```text
//! min  kappa + tau * |w|^2 + rho * sum_i xi_i
//! s.t. |y_i - <w, phi(x_i)> - b| - kappa <= xi_i,  xi_i >= 0,  kappa >= 0
//! ```
//!
//! through its dual. Writing `w = sum_i c_i phi(x_i)` with `c = beta / (2 tau)`,
//! the dual is
//!
//! ```text
//! max  beta.y - beta' K beta / (4 tau)
//! s.t. sum beta_i = 0,  sum |beta_i| <= 1,  |beta_i| <= rho
//! ```
//!
//! which is solved by SMO over the split `beta = a - a*`. When the tube is
//! active the `sum |beta|` constraint holds with equality (nu-SVR form, pair
//! updates inside each sign group); when the optimum pins `kappa` at zero it
//! is the plain epsilon-SVR dual with `epsilon = 0`.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::GlobalState;
use crate::error::{Error, Result};
use crate::surrogate::SampleSet;

/// Shift used when a pair's curvature is not positive.
const TAU_EPS: f64 = 1e-12;
const FULL_MATRIX_LIMIT: usize = 4096;
const CACHE_BYTES: usize = 512 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-bandwidth * |x - x'|^2)`
    Rbf { bandwidth: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-bandwidth * d2).exp()
            }
        }
    }

    pub fn bandwidth(&self) -> f64 {
        match *self {
            Kernel::Rbf { bandwidth } => bandwidth,
        }
    }
}

/// `1 / (dim * variance)` of all coordinates pooled; 1.0 when the variance
/// vanishes.
pub fn default_bandwidth(states: &[GlobalState]) -> f64 {
    let dim = states.first().map_or(1, |s| s.dim()).max(1);
    let values: Vec<f64> = states.iter().flat_map(|s| s.coords().iter().map(|&c| c as f64)).collect();
    if values.is_empty() {
        return 1.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (dim as f64 * var)
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_iterations: 1_000_000,
        }
    }
}

/// Translate libsvm-style nu-SVR settings (`nu`, `C`) on `n` samples into the
/// tube-penalty pair `(rho, tau)` of the program solved here.
pub fn tube_params_from_nu_svr(nu: f64, c: f64, n: usize) -> (f64, f64) {
    let rho = 1.0 / (nu * n as f64);
    let tau = 1.0 / (2.0 * c * nu * n as f64);
    (rho, tau)
}

/// Fitted regressor `f(x) = sum_j c_j k(s_j, x) + b` with tube radius `kappa`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvrModel {
    pub support_states: Vec<GlobalState>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub kappa: f64,
    pub kernel: Kernel,
    pub rho: f64,
    pub tau: f64,
    support_features: Vec<Vec<f64>>,
}

fn features(x: &GlobalState) -> Vec<f64> {
    x.coords().iter().map(|&c| c as f64).collect()
}

impl SvrModel {
    pub fn new(
        support_states: Vec<GlobalState>,
        coefficients: Vec<f64>,
        bias: f64,
        kappa: f64,
        kernel: Kernel,
        rho: f64,
        tau: f64,
    ) -> Result<Self> {
        if support_states.len() != coefficients.len() {
            return Err(Error::InvalidInput("one coefficient per support state required".into()));
        }
        if !(kappa >= 0.0) || !bias.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("model parameters must be finite with kappa >= 0".into()));
        }
        let support_features = support_states.iter().map(features).collect();
        Ok(SvrModel {
            support_states,
            coefficients,
            bias,
            kappa,
            kernel,
            rho,
            tau,
            support_features,
        })
    }

    pub fn predict(&self, x: &GlobalState) -> f64 {
        self.predict_features(&features(x))
    }

    pub(crate) fn predict_features(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (s, c) in self.support_features.iter().zip(&self.coefficients) {
            acc += c * self.kernel.eval(s, x);
        }
        acc + self.bias
    }

    /// `|w|^2 = c' K c` over the support set.
    pub fn weight_norm_sq(&self) -> f64 {
        let n = self.coefficients.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.coefficients[i]
                    * self.coefficients[j]
                    * self.kernel.eval(&self.support_features[i], &self.support_features[j]);
            }
        }
        acc
    }

    /// Primal objective on `(xs, ys)`.
    pub fn objective(&self, xs: &[GlobalState], ys: &[f64]) -> f64 {
        let slack: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| ((y - self.predict(x)).abs() - self.kappa).max(0.0))
            .sum();
        self.kappa + self.tau * self.weight_norm_sq() + self.rho * slack
    }

    /// Conservative trigger threshold `f(x) - kappa`.
    pub fn threshold(&self, x: &GlobalState) -> f64 {
        self.predict(x) - self.kappa
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_text(&text)
    }

    /// Line-oriented text form; reals carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "svr-model 1");
        match self.kernel {
            Kernel::Rbf { bandwidth } => {
                let _ = writeln!(s, "kernel rbf");
                let _ = writeln!(s, "bandwidth {bandwidth:.16e}");
            }
        }
        let _ = writeln!(s, "rho {:.16e}", self.rho);
        let _ = writeln!(s, "tau {:.16e}", self.tau);
        let _ = writeln!(s, "kappa {:.16e}", self.kappa);
        let _ = writeln!(s, "bias {:.16e}", self.bias);
        let _ = writeln!(s, "support {}", self.support_states.len());
        for (x, c) in self.support_states.iter().zip(&self.coefficients) {
            let _ = write!(s, "{c:.16e}");
            for v in x.coords() {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |d: &str| Error::format("SVR model", d.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(line))?;
            if k != name {
                return Err(bad(&format!("expected {name}, found {k}")));
            }
            Ok(v.trim().to_string())
        };
        let num = |v: String| v.parse::<f64>().map_err(|e| bad(&e.to_string()));
        if field("svr-model")? != "1" {
            return Err(bad("unsupported version"));
        }
        let kind = field("kernel")?;
        if kind != "rbf" {
            return Err(bad(&format!("unknown kernel {kind}")));
        }
        let kernel = Kernel::Rbf {
            bandwidth: num(field("bandwidth")?)?,
        };
        let rho = num(field("rho")?)?;
        let tau = num(field("tau")?)?;
        let kappa = num(field("kappa")?)?;
        let bias = num(field("bias")?)?;
        let count: usize = field("support")?.parse().map_err(|_| bad("support count"))?;
        let mut states = Vec::with_capacity(count);
        let mut coefs = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated support list"))?;
            let mut parts = line.split_whitespace();
            let c = parts
                .next()
                .ok_or_else(|| bad("empty support line"))?
                .parse::<f64>()
                .map_err(|e| bad(&e.to_string()))?;
            let coords = parts
                .map(|p| p.parse::<i32>().map_err(|e| bad(&e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            coefs.push(c);
            states.push(GlobalState::new(coords));
        }
        if lines.next().is_some() {
            return Err(bad("trailing content"));
        }
        SvrModel::new(states, coefs, bias, kappa, kernel, rho, tau)
    }
}

/// Number of samples strictly outside the prediction tube.
pub fn count_outliers(model: &SvrModel, data: &SampleSet) -> usize {
    data.samples
        .par_iter()
        .filter(|s| is_outlier((s.y as f64 - model.predict(&s.x)).abs(), model.kappa))
        .count()
}

/// Residuals within this distance of the tube edge count as on the edge.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Strictly outside the tube; points on its edge (up to rounding) are inside.
#[inline]
pub fn is_outlier(abs_residual: f64, kappa: f64) -> bool {
    abs_residual > kappa + BOUNDARY_TOLERANCE
}

/// The conservative threshold used as a trigger: `f(x) - kappa`, and its
/// floor, which is what an integer deviation is effectively compared to.
#[derive(Clone, Debug)]
pub struct TriggerThreshold<'a> {
    model: &'a SvrModel,
}

pub fn triggered_threshold(model: &SvrModel) -> TriggerThreshold<'_> {
    TriggerThreshold { model }
}

impl TriggerThreshold<'_> {
    pub fn eval(&self, x: &GlobalState) -> f64 {
        self.model.threshold(x)
    }

    pub fn floor(&self, x: &GlobalState) -> f64 {
        self.eval(x).floor()
    }
}

/// Kernel rows on demand; the full matrix when it is small.
struct KernelRows<'a> {
    xs: &'a [Vec<f64>],
    kernel: Kernel,
    full: Option<Vec<f64>>,
    cache: HashMap<usize, Arc<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(xs: &'a [Vec<f64>], kernel: Kernel) -> Self {
        let n = xs.len();
        let full = (n <= FULL_MATRIX_LIMIT).then(|| {
            let mut m = vec![0.0; n * n];
            m.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = kernel.eval(&xs[i], &xs[j]);
                }
            });
            m
        });
        KernelRows {
            xs,
            kernel,
            full,
            cache: HashMap::new(),
            order: VecDeque::new(),
            capacity: (CACHE_BYTES / (8 * n.max(1))).max(2),
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        let n = self.xs.len();
        if let Some(m) = &self.full {
            return Arc::new(m[i * n..(i + 1) * n].to_vec());
        }
        if let Some(r) = self.cache.get(&i) {
            return r.clone();
        }
        let xi = &self.xs[i];
        let kernel = self.kernel;
        let row: Vec<f64> = self.xs.par_iter().map(|xj| kernel.eval(xi, xj)).collect();
        let row = Arc::new(row);
        if self.cache.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.cache.insert(i, row.clone());
        self.order.push_back(i);
        row
    }

    fn entry(&self, i: usize, j: usize) -> Option<f64> {
        self.full.as_ref().map(|m| m[i * self.xs.len() + j])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DualForm {
    /// Tube active: `sum a = sum a* = 1/2`.
    Nu,
    /// Tube pinned at zero: `sum a = sum a*`, `sum (a + a*) <= 1`.
    ZeroTube,
}

struct DualSolution {
    beta: Vec<f64>,
    bias: f64,
    kappa: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// SMO over `2n` variables: index `t < n` is `a_t` (sign +1), `t >= n` is
/// `a*_{t-n}` (sign -1). Minimises `(1/2) a'Qa + p'a` with
/// `Q_st = s_s s_t K_ij / (2 tau)` and `p_s = -s_s y_i`.
fn smo(rows: &mut KernelRows<'_>, ys: &[f64], rho: f64, tau: f64, form: DualForm, opts: &SolverOptions) -> DualSolution {
    let n = ys.len();
    let m = 2 * n;
    let scale = 1.0 / (2.0 * tau);
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let data = |t: usize| if t < n { t } else { t - n };
    let cap = rho;

    let mut a = vec![0.0; m];
    if form == DualForm::Nu {
        let mut remaining: f64 = 0.5;
        for i in 0..n {
            let v = remaining.min(cap);
            a[i] = v;
            a[i + n] = v;
            remaining -= v;
        }
    }
    // a and a* start equal, so K beta = 0 and the gradient is p.
    let mut g: Vec<f64> = (0..m).map(|t| -sign(t) * ys[data(t)]).collect();
    let qd = scale; // RBF diagonal is 1

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let at_upper = |v: f64| v >= cap;
    let at_lower = |v: f64| v <= 0.0;

    while iterations < opts.max_iterations {
        // working-set selection, second-order
        let (i, j, gap) = match form {
            DualForm::ZeroTube => {
                let mut gmax = f64::NEG_INFINITY;
                let mut gi = usize::MAX;
                for t in 0..m {
                    if sign(t) > 0.0 {
                        if !at_upper(a[t]) && -g[t] >= gmax {
                            gmax = -g[t];
                            gi = t;
                        }
                    } else if !at_lower(a[t]) && g[t] >= gmax {
                        gmax = g[t];
                        gi = t;
                    }
                }
                if gi == usize::MAX {
                    residual = 0.0;
                    converged = true;
                    break;
                }
                let ki = rows.row(data(gi));
                let si = sign(gi);
                let mut gmax2 = f64::NEG_INFINITY;
                let mut best = f64::INFINITY;
                let mut gj = usize::MAX;
                for t in 0..m {
                    let st = sign(t);
                    // y_i * Q_it = s_t * K~_it
                    let yq = st * scale * ki[data(t)];
                    if st > 0.0 {
                        if !at_lower(a[t]) {
                            let diff = gmax + g[t];
                            if g[t] >= gmax2 {
                                gmax2 = g[t];
                            }
                            if diff > 0.0 {
                                let quad = qd + qd - 2.0 * si * yq;
                                let obj = -diff * diff / if quad > 0.0 { quad } else { TAU_EPS };
                                if obj <= best {
                                    best = obj;
                                    gj = t;
                                }
                            }
                        }
                    } else if !at_upper(a[t]) {
                        let diff = gmax - g[t];
                        if -g[t] >= gmax2 {
                            gmax2 = -g[t];
                        }
                        if diff > 0.0 {
                            let quad = qd + qd + 2.0 * si * yq;
                            let obj = -diff * diff / if quad > 0.0 { quad } else { TAU_EPS };
                            if obj <= best {
                                best = obj;
                                gj = t;
                            }
                        }
                    }
                }
                (gi, gj, gmax + gmax2)
            }
            DualForm::Nu => {
                let mut gmaxp = f64::NEG_INFINITY;
                let mut gmaxn = f64::NEG_INFINITY;
                let (mut ip, mut inn) = (usize::MAX, usize::MAX);
                for t in 0..m {
                    if sign(t) > 0.0 {
                        if !at_upper(a[t]) && -g[t] >= gmaxp {
                            gmaxp = -g[t];
                            ip = t;
                        }
                    } else if !at_lower(a[t]) && g[t] >= gmaxn {
                        gmaxn = g[t];
                        inn = t;
                    }
                }
                let kp = (ip != usize::MAX).then(|| rows.row(data(ip)));
                let kn = (inn != usize::MAX).then(|| rows.row(data(inn)));
                let mut gmaxp2 = f64::NEG_INFINITY;
                let mut gmaxn2 = f64::NEG_INFINITY;
                let mut best = f64::INFINITY;
                let mut gj = usize::MAX;
                for t in 0..m {
                    if sign(t) > 0.0 {
                        if !at_lower(a[t]) {
                            let diff = gmaxp + g[t];
                            if g[t] >= gmaxp2 {
                                gmaxp2 = g[t];
                            }
                            if diff > 0.0 {
                                if let Some(kp) = &kp {
                                    let quad = qd + qd - 2.0 * scale * kp[data(t)];
                                    let obj = -diff * diff / if quad > 0.0 { quad } else { TAU_EPS };
                                    if obj <= best {
                                        best = obj;
                                        gj = t;
                                    }
                                }
                            }
                        }
                    } else if !at_upper(a[t]) {
                        let diff = gmaxn - g[t];
                        if -g[t] >= gmaxn2 {
                            gmaxn2 = -g[t];
                        }
                        if diff > 0.0 {
                            if let Some(kn) = &kn {
                                let quad = qd + qd - 2.0 * scale * kn[data(t)];
                                let obj = -diff * diff / if quad > 0.0 { quad } else { TAU_EPS };
                                if obj <= best {
                                    best = obj;
                                    gj = t;
                                }
                            }
                        }
                    }
                }
                let gap = (gmaxp + gmaxp2).max(gmaxn + gmaxn2);
                let gi = if gj != usize::MAX && sign(gj) > 0.0 { ip } else { inn };
                (gi, gj, gap)
            }
        };
        residual = gap.max(0.0);
        if gap < opts.tolerance || j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let ki = rows.row(data(i));
        let kj = rows.row(data(j));
        let (si, sj) = (sign(i), sign(j));
        let qij = si * sj * scale * ki[data(j)];
        let (old_i, old_j) = (a[i], a[j]);
        if si != sj {
            let mut quad = qd + qd + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU_EPS;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > cap {
                    a[i] = cap;
                    a[j] = cap - diff;
                }
            } else if a[j] > cap {
                a[j] = cap;
                a[i] = cap + diff;
            }
        } else {
            let mut quad = qd + qd - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU_EPS;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > cap {
                if a[i] > cap {
                    a[i] = cap;
                    a[j] = sum - cap;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > cap {
                if a[j] > cap {
                    a[j] = cap;
                    a[i] = sum - cap;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let di = a[i] - old_i;
        let dj = a[j] - old_j;
        if di != 0.0 || dj != 0.0 {
            g.par_iter_mut().enumerate().for_each(|(t, gt)| {
                let st = sign(t);
                let d = data(t);
                *gt += scale * st * (si * ki[d] * di + sj * kj[d] * dj);
            });
        }
    }

    let beta: Vec<f64> = (0..n).map(|k| a[k] - a[k + n]).collect();
    let (bias, kappa) = match form {
        DualForm::Nu => {
            // free a_t: G = -kappa - b;  free a*_t: G = b - kappa
            let group = |positive: bool| {
                let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut sum, mut count) = (0.0, 0usize);
                for t in 0..m {
                    if (sign(t) > 0.0) != positive {
                        continue;
                    }
                    let v = g[t];
                    if at_upper(a[t]) {
                        lb = lb.max(v);
                    } else if at_lower(a[t]) {
                        ub = ub.min(v);
                    } else {
                        sum += v;
                        count += 1;
                    }
                }
                if count > 0 {
                    sum / count as f64
                } else {
                    finite_mid(lb, ub)
                }
            };
            let r1 = group(true);
            let r2 = group(false);
            ((r2 - r1) / 2.0, -(r1 + r2) / 2.0)
        }
        DualForm::ZeroTube => {
            let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut sum, mut count) = (0.0, 0usize);
            for t in 0..m {
                let st = sign(t);
                let yg = st * g[t];
                if at_upper(a[t]) {
                    if st < 0.0 {
                        ub = ub.min(yg);
                    } else {
                        lb = lb.max(yg);
                    }
                } else if at_lower(a[t]) {
                    if st > 0.0 {
                        ub = ub.min(yg);
                    } else {
                        lb = lb.max(yg);
                    }
                } else {
                    sum += yg;
                    count += 1;
                }
            }
            let r = if count > 0 { sum / count as f64 } else { finite_mid(lb, ub) };
            (-r, 0.0)
        }
    };
    DualSolution {
        beta,
        bias,
        kappa,
        iterations,
        residual,
        converged,
    }
}

fn finite_mid(lb: f64, ub: f64) -> f64 {
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => (lb + ub) / 2.0,
        (true, false) => lb,
        (false, true) => ub,
        (false, false) => 0.0,
    }
}

/// `min_{kappa >= 0} kappa + rho * sum max(0, |r_i| - kappa)` for residuals
/// `r_i = g_i - b`, returning `(value, kappa)`.
fn tube_cost(g: &[f64], b: f64, rho: f64, scratch: &mut Vec<f64>) -> (f64, f64) {
    scratch.clear();
    scratch.extend(g.iter().map(|v| (v - b).abs()));
    let n = scratch.len();
    // kappa is the (m+1)-th largest residual, m = floor(1/rho)
    let m = (1.0 / rho).floor();
    let kappa = if m >= n as f64 {
        0.0
    } else {
        let k = m as usize;
        let idx = n - 1 - k;
        let (_, kth, _) = scratch.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
        *kth
    };
    let slack: f64 = scratch.iter().map(|r| (r - kappa).max(0.0)).sum();
    (kappa + rho * slack, kappa)
}

/// Exact minimisation over `(b, kappa)` for a fixed regressor; the cost is
/// convex and piecewise linear in `b`.
fn refine_offset(g: &[f64], rho: f64) -> (f64, f64, f64) {
    let mut scratch = Vec::with_capacity(g.len());
    let (mut lo, mut hi) = g
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo < hi) {
        let (c, k) = tube_cost(g, lo, rho, &mut scratch);
        return (c, lo, k);
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = tube_cost(g, x1, rho, &mut scratch).0;
    let mut f2 = tube_cost(g, x2, rho, &mut scratch).0;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = tube_cost(g, x1, rho, &mut scratch).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = tube_cost(g, x2, rho, &mut scratch).0;
        }
    }
    let b = (lo + hi) / 2.0;
    let (c, k) = tube_cost(g, b, rho, &mut scratch);
    (c, b, k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub tube_active: bool,
}

/// Fits the regressor on raw states and targets.
pub fn fit_points(
    xs: &[GlobalState],
    ys: &[f64],
    rho: f64,
    tau: f64,
    kernel: Kernel,
    opts: &SolverOptions,
) -> Result<(SvrModel, FitReport)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InvalidInput("need at least two samples with one target each".into()));
    }
    if !(rho > 0.0) || !(tau > 0.0) || !(kernel.bandwidth() > 0.0) {
        return Err(Error::InvalidInput("rho, tau and bandwidth must be > 0".into()));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite target".into()));
    }
    let feats: Vec<Vec<f64>> = xs.iter().map(features).collect();
    let mut rows = KernelRows::new(&feats, kernel);

    // The tube can only be active when the equality-form dual is feasible.
    let mut sol = None;
    if rho * n as f64 >= 0.5 {
        let s = smo(&mut rows, ys, rho, tau, DualForm::Nu, opts);
        if s.kappa >= 0.0 || !s.converged {
            sol = Some((s, true));
        }
    }
    let (sol, tube_active) = match sol {
        Some(s) => s,
        None => (smo(&mut rows, ys, rho, tau, DualForm::ZeroTube, opts), false),
    };

    let scale = 1.0 / (2.0 * tau);
    let coef: Vec<f64> = sol.beta.iter().map(|b| b * scale).collect();
    // g_i = y_i - sum_j c_j K_ij
    let g: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (j, c) in coef.iter().enumerate() {
                if *c != 0.0 {
                    acc += c * rows.entry(i, j).unwrap_or_else(|| kernel.eval(&feats[i], &feats[j]));
                }
            }
            ys[i] - acc
        })
        .collect();

    let kappa0 = sol.kappa.max(0.0);
    let dual_cost = kappa0
        + rho
            * g.iter()
                .map(|v| ((v - sol.bias).abs() - kappa0).max(0.0))
                .sum::<f64>();
    let (ref_cost, ref_b, ref_k) = refine_offset(&g, rho);
    let (bias, kappa) = if ref_cost < dual_cost { (ref_b, ref_k) } else { (sol.bias, kappa0) };

    let keep: Vec<usize> = (0..n).filter(|&i| coef[i] != 0.0).collect();
    let model = SvrModel::new(
        keep.iter().map(|&i| xs[i].clone()).collect(),
        keep.iter().map(|&i| coef[i]).collect(),
        bias,
        kappa,
        kernel,
        rho,
        tau,
    )?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
            best: Some(Box::new(model)),
        });
    }
    let objective = model.objective(xs, ys);
    Ok((
        model,
        FitReport {
            iterations: sol.iterations,
            kkt_residual: sol.residual,
            objective,
            tube_active,
        },
    ))
}

/// Fits the regressor on a labelled sample set.
pub fn fit_svr(data: &SampleSet, rho: f64, tau: f64, kernel: Kernel) -> Result<SvrModel> {
    fit_points(&data.states(), &data.targets(), rho, tau, kernel, &SolverOptions::default()).map(|(m, _)| m)
}
