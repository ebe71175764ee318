//! Experiment driver: configuration, artifact bookkeeping and the pipeline
//! stages `train -> surrogate -> fit -> bounds -> simulate -> report`.
//!
//! Every artifact is recorded in `manifest.json` with its checksum and a hash
//! of the inputs that produced it (configuration slice plus upstream
//! checksums). Loading an artifact whose recorded inputs differ from what the
//! current configuration would produce fails with [`Error::StaleArtifact`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvConfig, ParticleTag};
use crate::error::{Error, Result};
use crate::exec::{self, game_seed, BatchSummary, EpisodeRecord, Start, TriggerKind, TriggerPolicy};
use crate::planner::{self, bellman_residual, PolicyTable, QTable, QTableMeta, TrainConfig, TrainMode};
use crate::risk::{epsilon_bounds, RiskBounds};
use crate::surrogate::{gamma_alpha_table, sample_surrogates, write_samples, SampleSet};
use crate::svr::{count_outliers, default_bandwidth, fit_points, tube_params_from_nu_svr, Kernel, SolverOptions, SvrModel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Published reference rows: `(alpha, eps_hi, delta)`.
pub const REFERENCE_ROWS: [(f64, f64, f64); 6] = [
    (0.4, 0.079, 16.33),
    (0.5, 0.148, 22.39),
    (0.6, 0.205, 26.61),
    (0.7, 0.117, 26.85),
    (0.8, 0.075, 28.10),
    (0.9, 0.097, 31.69),
];
pub const REFERENCE_IOTA: f64 = 1.57;
pub const REFERENCE_GAMMA: f64 = 0.97;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvrAlphaConfig {
    pub alpha: f64,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

/// Regressor settings. `(rho, tau)` may be given directly or as libsvm-style
/// `(nu, c)`, converted with the sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvrConfig {
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// RBF bandwidth; the data-driven default when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub per_alpha: Vec<SvrAlphaConfig>,
}

fn default_nu() -> f64 {
    0.1
}
fn default_c() -> f64 {
    100.0
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    1_000_000
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            nu: default_nu(),
            c: default_c(),
            bandwidth: None,
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            per_alpha: Vec::new(),
        }
    }
}

/// Resolved regressor settings for one alpha.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub rho: f64,
    pub tau: f64,
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_games: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_artifacts")]
    pub artifacts: PathBuf,
    #[serde(default = "default_results")]
    pub results: PathBuf,
}

fn default_artifacts() -> PathBuf {
    PathBuf::from("artifacts")
}
fn default_results() -> PathBuf {
    PathBuf::from("results")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            artifacts: default_artifacts(),
            results: default_results(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub alphas: Vec<f64>,
    pub sample_size: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub svr: SvrConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_gamma() -> f64 {
    0.97
}
fn default_beta() -> f64 {
    1e-3
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub arena: Option<u32>,
    pub seed: Option<u64>,
    pub games: Option<usize>,
}

fn reference_svr_rows() -> Vec<SvrAlphaConfig> {
    [(0.4, 0.01), (0.5, 0.01), (0.6, 0.1), (0.7, 0.1), (0.8, 0.1), (0.9, 0.1)]
        .into_iter()
        .map(|(alpha, nu)| SvrAlphaConfig {
            alpha,
            rho: None,
            tau: None,
            nu: Some(nu),
            c: Some(100.0),
            bandwidth: None,
        })
        .collect()
}

impl RunConfig {
    /// Small arena, exact planning: the profile the test-suite runs on.
    pub fn desk() -> Self {
        RunConfig {
            env: EnvConfig::new(5),
            train: TrainConfig::default(),
            gamma: 0.97,
            alphas: vec![0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            sample_size: 2000,
            beta: 1e-3,
            svr: SvrConfig {
                per_alpha: reference_svr_rows(),
                ..SvrConfig::default()
            },
            sim: SimConfig {
                n_games: 2000,
                master_seed: 2024,
            },
            paths: PathsConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    /// Full-size arena trained by Q-learning. Expensive.
    pub fn full() -> Self {
        let mut cfg = Self::desk();
        cfg.env = EnvConfig::new(10);
        cfg.train = TrainConfig {
            mode: TrainMode::QLearning,
            ql_episodes: 5_000_000,
            exploration: planner::Exploration {
                start: 1.0,
                end: 0.05,
                decay_episodes: 4_000_000,
            },
            ..TrainConfig::default()
        };
        cfg.alphas = vec![0.0, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        cfg.sample_size = 10_000;
        cfg.sim.n_games = 100_000;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run configuration", e.to_string()))
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(w) = o.arena {
            self.env.arena_width = w;
        }
        if let Some(s) = o.seed {
            self.sim.master_seed = s;
        }
        if let Some(g) = o.games {
            self.sim.n_games = g;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if self.alphas.is_empty() {
            return Err(Error::InvalidConfig("alphas must not be empty".into()));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidConfig("alphas must be finite and >= 0".into()));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("alphas must be strictly ascending".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} not in (0, 1)", self.beta)));
        }
        if self.sample_size < 2 {
            return Err(Error::InvalidConfig("sample_size must be >= 2".into()));
        }
        if self.sim.n_games == 0 {
            return Err(Error::InvalidConfig("sim.n_games must be >= 1".into()));
        }
        for row in &self.svr.per_alpha {
            let direct = row.rho.is_some() || row.tau.is_some();
            let nu = row.nu.is_some() || row.c.is_some();
            if direct && nu {
                return Err(Error::InvalidConfig(format!(
                    "svr.per_alpha at alpha={}: give either rho/tau or nu/c, not both",
                    row.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.base_dir.join(&self.paths.artifacts)
    }

    pub fn results_dir(&self) -> PathBuf {
        self.base_dir.join(&self.paths.results)
    }

    pub fn env(&self) -> Result<ParticleTag> {
        ParticleTag::new(self.env.clone())
    }

    /// Regressor settings for `alpha`, per-alpha rows taking precedence.
    pub fn svr_params(&self, alpha: f64) -> SvrParams {
        let row = self.svr.per_alpha.iter().find(|r| r.alpha == alpha);
        let bandwidth = row.and_then(|r| r.bandwidth).or(self.svr.bandwidth);
        if let Some(SvrAlphaConfig {
            rho: Some(rho),
            tau: Some(tau),
            ..
        }) = row
        {
            return SvrParams {
                rho: *rho,
                tau: *tau,
                bandwidth,
            };
        }
        let nu = row.and_then(|r| r.nu).unwrap_or(self.svr.nu);
        let c = row.and_then(|r| r.c).unwrap_or(self.svr.c);
        let (rho, tau) = tube_params_from_nu_svr(nu, c, self.sample_size);
        SvrParams { rho, tau, bandwidth }
    }

    pub fn train_seed(&self) -> u64 {
        stage_seed(self.sim.master_seed, "train")
    }

    pub fn surrogate_seed(&self, alpha: f64) -> u64 {
        stage_seed(self.sim.master_seed, &format!("surrogate/{alpha}"))
    }

    /// Shared by every alpha and trigger so that runs are paired.
    pub fn simulate_seed(&self) -> u64 {
        stage_seed(self.sim.master_seed, "simulate")
    }

    fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(),
            ..self.train.clone()
        }
    }

    /// Hash of the whole configuration (paths excluded).
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("paths");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

/// Seed of a named stage: SHA-256 of the label, folded with the master seed.
pub fn stage_seed(master: u64, label: &str) -> u64 {
    let d = Sha256::digest(label.as_bytes());
    let tag = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    game_seed(master, tag)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn hash_json(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// File name inside its directory.
    pub file: String,
    pub sha256: String,
    /// Hash of the configuration slice and upstream checksums used.
    pub inputs: String,
    pub created_unix: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl RunManifest {
    pub fn path(cfg: &RunConfig) -> PathBuf {
        cfg.artifacts_dir().join("manifest.json")
    }

    /// Loads the manifest, or an empty one when none exists yet.
    pub fn load_or_default(cfg: &RunConfig) -> Result<Self> {
        let path = Self::path(cfg);
        if !path.exists() {
            return Ok(RunManifest {
                tool_version: TOOL_VERSION.into(),
                config_hash: cfg.config_hash(),
                artifacts: BTreeMap::new(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }

    pub fn save(&self, cfg: &RunConfig) -> Result<()> {
        let path = Self::path(cfg);
        ensure_dir(&cfg.artifacts_dir())?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format("manifest", e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn record(&mut self, key: &str, path: &Path, inputs: &str) -> Result<String> {
        let sha = sha256_file(path)?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.artifacts.insert(
            key.to_string(),
            ArtifactEntry {
                file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha.clone(),
                inputs: inputs.to_string(),
                created_unix,
            },
        );
        Ok(sha)
    }

    /// Checks that `key` exists, was produced from `inputs` and is unchanged
    /// on disk. Returns its checksum.
    pub fn verify(&self, key: &str, path: &Path, inputs: &str) -> Result<String> {
        let entry = self.artifacts.get(key).ok_or_else(|| Error::MissingArtifact(path.to_path_buf()))?;
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        if entry.inputs != inputs {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                reason: "produced from a different configuration or upstream artifact".into(),
            });
        }
        let sha = sha256_file(path)?;
        if sha != entry.sha256 {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                reason: "file changed since it was recorded".into(),
            });
        }
        Ok(sha)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn qtable_path(cfg: &RunConfig) -> PathBuf {
    cfg.artifacts_dir().join("qtable.bin")
}
pub fn policy_path(cfg: &RunConfig) -> PathBuf {
    cfg.artifacts_dir().join("policy.bin")
}
pub fn samples_path(cfg: &RunConfig, alpha: f64) -> PathBuf {
    cfg.artifacts_dir().join(format!("samples_a{alpha}.csv"))
}
pub fn model_path(cfg: &RunConfig, alpha: f64) -> PathBuf {
    cfg.artifacts_dir().join(format!("svr_a{alpha}.txt"))
}
pub fn bounds_path(cfg: &RunConfig, alpha: f64) -> PathBuf {
    cfg.artifacts_dir().join(format!("bounds_a{alpha}.json"))
}
pub fn episodes_path(cfg: &RunConfig, kind: TriggerKind, alpha: f64) -> PathBuf {
    cfg.results_dir().join(format!("episodes_{kind}_a{alpha}.csv"))
}
pub fn run_summary_path(cfg: &RunConfig, kind: TriggerKind, alpha: f64) -> PathBuf {
    cfg.results_dir().join(format!("summary_{kind}_a{alpha}.csv"))
}

fn train_inputs(cfg: &RunConfig) -> String {
    hash_json(&serde_json::json!({
        "env": cfg.env,
        "train": cfg.effective_train(),
        "gamma": cfg.gamma,
    }))
}

fn surrogate_inputs(cfg: &RunConfig, alpha: f64, q_sha: &str, p_sha: &str) -> String {
    hash_json(&serde_json::json!({
        "alpha": alpha,
        "sample_size": cfg.sample_size,
        "seed": cfg.surrogate_seed(alpha),
        "qtable": q_sha,
        "policy": p_sha,
    }))
}

fn fit_inputs(cfg: &RunConfig, alpha: f64, samples_sha: &str) -> String {
    hash_json(&serde_json::json!({
        "alpha": alpha,
        "svr": cfg.svr_params(alpha),
        "tolerance": cfg.svr.tolerance,
        "max_iterations": cfg.svr.max_iterations,
        "beta": cfg.beta,
        "samples": samples_sha,
    }))
}

/// Trained tables plus their metadata.
pub struct Trained {
    pub env: ParticleTag,
    pub q: QTable,
    pub policy: PolicyTable,
    pub meta: QTableMeta,
}

/// Trains (or solves) the game and persists the Q table, its metadata and
/// the greedy policy.
pub fn cmd_train(cfg: &RunConfig) -> Result<QTableMeta> {
    let env = cfg.env()?;
    let tcfg = cfg.effective_train();
    let q = planner::train(&env, cfg.gamma, &tcfg)?;
    let policy = PolicyTable::from_q(&q);
    let qp = qtable_path(cfg);
    let pp = policy_path(cfg);
    ensure_dir(&cfg.artifacts_dir())?;
    q.save(&qp)?;
    policy.save(&pp)?;
    let meta = QTableMeta {
        mode: tcfg.mode,
        gamma: cfg.gamma,
        arena_width: env.width(),
        state_count: q.state_count(),
        action_count: q.action_count(),
        bellman_residual: bellman_residual(&env, &q)?,
        suboptimality_gap: q.suboptimality_gap(),
        sha256: sha256_file(&qp)?,
    };
    meta.save(&qp)?;
    let mut m = RunManifest::load_or_default(cfg)?;
    m.config_hash = cfg.config_hash();
    m.tool_version = TOOL_VERSION.into();
    let inputs = train_inputs(cfg);
    m.record("qtable", &qp, &inputs)?;
    m.record("policy", &pp, &inputs)?;
    m.save(cfg)?;
    Ok(meta)
}

/// Loads the trained tables after checking they match the configuration.
pub fn load_trained(cfg: &RunConfig, m: &RunManifest) -> Result<(Trained, String, String)> {
    let env = cfg.env()?;
    let qp = qtable_path(cfg);
    let pp = policy_path(cfg);
    let inputs = train_inputs(cfg);
    let q_sha = m.verify("qtable", &qp, &inputs)?;
    let p_sha = m.verify("policy", &pp, &inputs)?;
    let q = QTable::load(&qp)?;
    let policy = PolicyTable::load(&pp)?;
    let meta = QTableMeta::load(&qp)?;
    if q.state_count() != env.n_states() || policy.state_count() != env.n_states() {
        return Err(Error::StaleArtifact {
            path: qp,
            reason: "table size does not match the arena".into(),
        });
    }
    Ok((Trained { env, q, policy, meta }, q_sha, p_sha))
}

/// Draws and labels the sample set for `alpha`.
pub fn cmd_surrogate(cfg: &RunConfig, alpha: f64) -> Result<PathBuf> {
    let mut m = RunManifest::load_or_default(cfg)?;
    let (t, q_sha, p_sha) = load_trained(cfg, &m)?;
    let set = sample_surrogates(&t.env, alpha, cfg.sample_size, cfg.surrogate_seed(alpha), &t.q, &t.policy)?;
    let path = samples_path(cfg, alpha);
    write_samples(&set, &path)?;
    m.record(&format!("samples/{alpha}"), &path, &surrogate_inputs(cfg, alpha, &q_sha, &p_sha))?;
    m.save(cfg)?;
    Ok(path)
}

fn load_samples(cfg: &RunConfig, m: &RunManifest, alpha: f64) -> Result<(SampleSet, String)> {
    let (_, q_sha, p_sha) = load_trained(cfg, m)?;
    let path = samples_path(cfg, alpha);
    let sha = m.verify(&format!("samples/{alpha}"), &path, &surrogate_inputs(cfg, alpha, &q_sha, &p_sha))?;
    let set = SampleSet::read_csv(&path, cfg.surrogate_seed(alpha))?;
    if set.alpha != alpha && !set.is_empty() {
        return Err(Error::StaleArtifact {
            path,
            reason: format!("sample set labelled for alpha={}", set.alpha),
        });
    }
    Ok((set, sha))
}

/// Fitted model summary and its risk bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub alpha: f64,
    pub rho: f64,
    pub tau: f64,
    pub bandwidth: f64,
    pub kappa: f64,
    pub bias: f64,
    pub support: usize,
    pub iterations: usize,
    pub r2: f64,
    pub bounds: RiskBounds,
}

fn r_squared(model: &SvrModel, set: &SampleSet) -> f64 {
    let ys = set.targets();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let res: f64 = set
        .samples
        .par_iter()
        .map(|s| {
            let e = s.y as f64 - model.predict(&s.x);
            e * e
        })
        .sum();
    if tot == 0.0 {
        if res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - res / tot
    }
}

fn fit_one(cfg: &RunConfig, m: &RunManifest, alpha: f64) -> Result<(FitOutcome, String)> {
    let (set, sha) = load_samples(cfg, m, alpha)?;
    let params = cfg.svr_params(alpha);
    let states = set.states();
    let bandwidth = params.bandwidth.unwrap_or_else(|| default_bandwidth(&states));
    let opts = SolverOptions {
        tolerance: cfg.svr.tolerance,
        max_iterations: cfg.svr.max_iterations,
    };
    let (model, report) = fit_points(&states, &set.targets(), params.rho, params.tau, Kernel::Rbf { bandwidth }, &opts)?;
    let s_star = count_outliers(&model, &set);
    let bounds = epsilon_bounds(set.len(), s_star, cfg.beta)?;
    model.save(&model_path(cfg, alpha))?;
    let out = FitOutcome {
        alpha,
        rho: params.rho,
        tau: params.tau,
        bandwidth,
        kappa: model.kappa,
        bias: model.bias,
        support: model.support_states.len(),
        iterations: report.iterations,
        r2: r_squared(&model, &set),
        bounds,
    };
    let text = serde_json::to_string_pretty(&out).map_err(|e| Error::format("bounds", e.to_string()))?;
    write_file(&bounds_path(cfg, alpha), text.as_bytes())?;
    Ok((out, fit_inputs(cfg, alpha, &sha)))
}

/// Fits the regressor for `alpha` and computes its risk bounds.
pub fn cmd_fit(cfg: &RunConfig, alpha: f64) -> Result<FitOutcome> {
    let mut res = cmd_fit_many(cfg, &[alpha])?;
    res.pop().expect("one alpha").1
}

/// Fits several alphas concurrently. A failure for one alpha is reported in
/// its slot and does not stop the others.
pub fn cmd_fit_many(cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<(f64, Result<FitOutcome>)>> {
    let mut m = RunManifest::load_or_default(cfg)?;
    let done: Vec<(f64, Result<(FitOutcome, String)>)> =
        alphas.par_iter().map(|&a| (a, fit_one(cfg, &m, a))).collect();
    let mut out = Vec::with_capacity(done.len());
    for (alpha, r) in done {
        match r {
            Ok((fit, inputs)) => {
                m.record(&format!("svr/{alpha}"), &model_path(cfg, alpha), &inputs)?;
                m.record(&format!("bounds/{alpha}"), &bounds_path(cfg, alpha), &inputs)?;
                out.push((alpha, Ok(fit)));
            }
            Err(e) => out.push((alpha, Err(e))),
        }
    }
    m.save(cfg)?;
    Ok(out)
}

fn load_fit(cfg: &RunConfig, m: &RunManifest, alpha: f64) -> Result<(SvrModel, FitOutcome, String)> {
    let (_, samples_sha) = load_samples(cfg, m, alpha)?;
    let inputs = fit_inputs(cfg, alpha, &samples_sha);
    let mp = model_path(cfg, alpha);
    let bp = bounds_path(cfg, alpha);
    let model_sha = m.verify(&format!("svr/{alpha}"), &mp, &inputs)?;
    m.verify(&format!("bounds/{alpha}"), &bp, &inputs)?;
    let model = SvrModel::load(&mp)?;
    let text = fs::read_to_string(&bp).map_err(|e| Error::io(&bp, e))?;
    let fit: FitOutcome = serde_json::from_str(&text).map_err(|e| Error::format("bounds", e.to_string()))?;
    Ok((model, fit, model_sha))
}

/// Re-derives the outlier count and risk bounds from the stored model and
/// samples and checks them against the stored values.
pub fn cmd_bounds(cfg: &RunConfig, alpha: f64) -> Result<RiskBounds> {
    let m = RunManifest::load_or_default(cfg)?;
    let (model, fit, _) = load_fit(cfg, &m, alpha)?;
    let (set, _) = load_samples(cfg, &m, alpha)?;
    let s_star = count_outliers(&model, &set);
    let again = epsilon_bounds(set.len(), s_star, cfg.beta)?;
    let stored = fit.bounds;
    if s_star != stored.s_star || (again.eps_hi - stored.eps_hi).abs() > 1e-9 || (again.eps_lo - stored.eps_lo).abs() > 1e-9 {
        return Err(Error::StaleArtifact {
            path: bounds_path(cfg, alpha),
            reason: format!("stored bounds {stored:?} differ from recomputed {again:?}"),
        });
    }
    Ok(again)
}

/// Summary row of one simulated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_length: f64,
    pub std_length: f64,
    pub mean_msgs: f64,
    pub std_msgs: f64,
    pub msg_rate: f64,
    pub eps_hi: Option<f64>,
    pub delta: Option<f64>,
}

impl SummaryRow {
    fn new(alpha: f64, s: &BatchSummary, eps_hi: Option<f64>, delta: Option<f64>) -> Self {
        SummaryRow {
            alpha,
            mean_return: s.mean_return,
            std_return: s.std_return,
            mean_length: s.mean_length,
            std_length: s.std_length,
            mean_msgs: s.mean_msgs,
            std_msgs: s.std_msgs,
            msg_rate: s.msg_rate,
            eps_hi,
            delta,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EpisodeRow {
    game_id: u64,
    alpha: f64,
    trigger_kind: String,
    #[serde(rename = "return")]
    ret: f64,
    length: u32,
    messages: u32,
    msg_rate: f64,
}

pub fn write_episodes_csv(path: &Path, alpha: f64, kind: TriggerKind, records: &[EpisodeRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(EpisodeRow {
            game_id: r.game_id,
            alpha,
            trigger_kind: kind.to_string(),
            ret: r.discounted_return,
            length: r.length,
            messages: r.total_messages(),
            msg_rate: r.msg_rate(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "alpha",
            "mean_return",
            "std_return",
            "mean_length",
            "std_length",
            "mean_msgs",
            "std_msgs",
            "msg_rate",
            "eps_hi",
            "delta",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Simulated batch plus the files it was written to.
#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub row: SummaryRow,
    pub records: Vec<EpisodeRecord>,
    pub episodes: PathBuf,
    pub summary: PathBuf,
}

/// Builds the trigger of `kind` at `alpha` from checked artifacts.
pub fn build_trigger(
    cfg: &RunConfig,
    m: &RunManifest,
    t: &Trained,
    alpha: f64,
    kind: TriggerKind,
) -> Result<(TriggerPolicy, Option<f64>, Option<f64>, String)> {
    let gamma = cfg.gamma;
    let iota = t.meta.suboptimality_gap;
    Ok(match kind {
        TriggerKind::FullComm => (TriggerPolicy::FullComm, Some(0.0), Some(0.0), String::new()),
        TriggerKind::Never => (TriggerPolicy::Never, None, None, String::new()),
        TriggerKind::Exact => {
            let table = gamma_alpha_table(&t.env, alpha, &t.q, &t.policy)?;
            // exact surrogates carry no risk: the loss bound is alpha gamma/(1-gamma)
            let delta = alpha * gamma / (1.0 - gamma);
            (
                TriggerPolicy::Exact {
                    alpha,
                    table: Arc::new(table),
                },
                Some(0.0),
                Some(delta),
                String::new(),
            )
        }
        TriggerKind::Svr => {
            let (model, fit, sha) = load_fit(cfg, m, alpha)?;
            let eps = fit.bounds.eps_hi;
            let delta = exec::corollary1_delta(alpha, eps, iota, gamma).ok();
            (
                TriggerPolicy::Svr {
                    alpha,
                    model: Arc::new(model),
                },
                Some(eps),
                delta,
                sha,
            )
        }
    })
}

/// Plays `sim.n_games` games under the trigger and writes per-episode and
/// summary CSVs.
pub fn cmd_simulate(cfg: &RunConfig, alpha: f64, kind: TriggerKind) -> Result<SimOutcome> {
    let mut m = RunManifest::load_or_default(cfg)?;
    let (t, _, p_sha) = load_trained(cfg, &m)?;
    let (trigger, eps_hi, delta, upstream) = build_trigger(cfg, &m, &t, alpha, kind)?;
    let batch = exec::run_batch(
        &t.env,
        &t.policy,
        &trigger,
        cfg.gamma,
        cfg.sim.n_games,
        cfg.simulate_seed(),
        &Start::Uniform,
    )?;
    let row = SummaryRow::new(alpha, &batch.summary, eps_hi, delta);
    let episodes = episodes_path(cfg, kind, alpha);
    let summary = run_summary_path(cfg, kind, alpha);
    write_episodes_csv(&episodes, alpha, kind, &batch.records)?;
    write_summary_csv(&summary, std::slice::from_ref(&row))?;
    let inputs = hash_json(&serde_json::json!({
        "alpha": alpha,
        "trigger": kind,
        "games": cfg.sim.n_games,
        "seed": cfg.simulate_seed(),
        "policy": p_sha,
        "model": upstream,
    }));
    m.record(&format!("sim/{kind}/{alpha}"), &summary, &inputs)?;
    m.save(cfg)?;
    Ok(SimOutcome {
        row,
        records: batch.records,
        episodes,
        summary,
    })
}

fn parse_summary_name(name: &str) -> Option<(TriggerKind, f64)> {
    let stem = name.strip_prefix("summary_")?.strip_suffix(".csv")?;
    let (kind, alpha) = stem.rsplit_once("_a")?;
    Some((kind.parse().ok()?, alpha.parse().ok()?))
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.prec$}"),
        _ => "-".into(),
    }
}

/// Files written by [`cmd_report`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub summaries: Vec<PathBuf>,
    pub long_format: PathBuf,
    pub reference: PathBuf,
}

/// Gathers every simulated configuration into per-trigger summary tables, a
/// long-format CSV of per-game returns, lengths and messages, and a markdown
/// report. Alphas of the configuration with no results are listed as gaps.
pub fn cmd_report(cfg: &RunConfig) -> Result<ReportFiles> {
    let dir = cfg.results_dir();
    let mut found: BTreeMap<&'static str, Vec<(f64, PathBuf)>> = BTreeMap::new();
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some((kind, alpha)) = parse_summary_name(&name) {
                found.entry(kind.as_str()).or_default().push((alpha, entry.path()));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::MissingArtifact(dir));
    }
    let gamma = cfg.gamma;
    let mut md = String::new();
    let _ = writeln!(md, "# Simulation report\n");
    let _ = writeln!(
        md,
        "Arena {w}x{w}, gamma {gamma}, {n} games per row, master seed {s}.\n",
        w = cfg.env.arena_width,
        n = cfg.sim.n_games,
        s = cfg.sim.master_seed
    );
    let m = RunManifest::load_or_default(cfg)?;
    if let Ok((t, _, _)) = load_trained(cfg, &m) {
        let v = t.q.state_values();
        let mean_v = v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(
            md,
            "Mean optimal value over uniform starts {mean_v:.4}; worst optimality gap {:.4}; Bellman residual {:.2e}.\n",
            t.meta.suboptimality_gap, t.meta.bellman_residual
        );
    }
    let _ = writeln!(
        md,
        "`delta` uses gamma/(1-gamma); `delta_geo` uses 1/(1-gamma). Std columns are per game.\n"
    );
    let mut summaries = Vec::new();
    let mut long = csv::Writer::from_path(dir.join("distributions.csv"))?;
    long.write_record(["trigger_kind", "alpha", "game_id", "metric", "value"])?;
    for (kind, mut files) in found {
        files.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut rows = Vec::new();
        for (_, p) in &files {
            rows.extend(read_summary_csv(p)?);
        }
        let _ = writeln!(md, "## Trigger `{kind}`\n");
        let _ = writeln!(
            md,
            "| alpha | return | length | messages | msg rate | eps_hi | delta | delta_geo |\n|---|---|---|---|---|---|---|---|"
        );
        for a in &cfg.alphas {
            if !rows.iter().any(|r| r.alpha == *a) && kind != "full-comm" {
                let _ = writeln!(md, "| {a} | missing | missing | missing | missing | - | - | - |");
            }
        }
        for r in &rows {
            let geo = r.delta.map(|d| d / gamma);
            let _ = writeln!(
                md,
                "| {} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:.2} ± {:.2} | {:.3} | {} | {} | {} |",
                r.alpha,
                r.mean_return,
                r.std_return,
                r.mean_length,
                r.std_length,
                r.mean_msgs,
                r.std_msgs,
                r.msg_rate,
                fmt_opt(r.eps_hi, 3),
                fmt_opt(r.delta, 2),
                fmt_opt(geo, 2)
            );
        }
        let _ = writeln!(md);
        let out = dir.join(format!("summary_{kind}.csv"));
        write_summary_csv(&out, &rows)?;
        summaries.push(out);

        let kind_t: TriggerKind = kind.parse()?;
        for (alpha, _) in &files {
            let ep = episodes_path(cfg, kind_t, *alpha);
            if !ep.exists() {
                continue;
            }
            let mut r = csv::Reader::from_path(&ep)?;
            for row in r.deserialize::<EpisodeRow>() {
                let row = row?;
                for (metric, value) in [
                    ("return", row.ret),
                    ("length", row.length as f64),
                    ("messages", row.messages as f64),
                ] {
                    long.write_record([
                        kind.to_string(),
                        alpha.to_string(),
                        row.game_id.to_string(),
                        metric.to_string(),
                        value.to_string(),
                    ])?;
                }
            }
        }
    }
    long.flush().map_err(|e| Error::io(&dir, e))?;

    let reference = dir.join("reference_delta.csv");
    let mut w = csv::Writer::from_path(&reference)?;
    w.write_record(["alpha", "eps_hi", "iota", "gamma", "delta_published", "delta", "delta_geo"])?;
    let _ = writeln!(
        md,
        "## Loss bound at the published inputs\n\niota = {REFERENCE_IOTA}, gamma = {REFERENCE_GAMMA}.\n\n| alpha | eps_hi | published delta | delta | delta_geo |\n|---|---|---|---|---|"
    );
    let mut ref_rows = vec![(0.0, 0.0, None)];
    ref_rows.extend(REFERENCE_ROWS.iter().map(|&(a, e, d)| (a, e, Some(d))));
    for (alpha, eps, published) in ref_rows {
        let d = exec::corollary1_delta(alpha, eps, REFERENCE_IOTA, REFERENCE_GAMMA)?;
        let g = exec::corollary1_delta_geometric(alpha, eps, REFERENCE_IOTA, REFERENCE_GAMMA)?;
        w.write_record([
            alpha.to_string(),
            eps.to_string(),
            REFERENCE_IOTA.to_string(),
            REFERENCE_GAMMA.to_string(),
            published.map(|p| p.to_string()).unwrap_or_default(),
            d.to_string(),
            g.to_string(),
        ])?;
        let _ = writeln!(md, "| {alpha} | {eps} | {} | {d:.2} | {g:.2} |", fmt_opt(published, 2));
    }
    w.flush().map_err(|e| Error::io(&reference, e))?;

    let markdown = dir.join("report.md");
    write_file(&markdown, md.as_bytes())?;
    Ok(ReportFiles {
        markdown,
        summaries,
        long_format: dir.join("distributions.csv"),
        reference,
    })
}

/// Runs every stage for every alpha. Fit failures are collected and
/// returned; the affected alphas are skipped in the learned-trigger runs.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(ReportFiles, Vec<(f64, Error)>)> {
    cmd_train(cfg)?;
    for &a in &cfg.alphas {
        cmd_surrogate(cfg, a)?;
    }
    let mut failures = Vec::new();
    let mut fitted = Vec::new();
    for (a, r) in cmd_fit_many(cfg, &cfg.alphas)? {
        match r {
            Ok(_) => fitted.push(a),
            Err(e) => failures.push((a, e)),
        }
    }
    cmd_simulate(cfg, 0.0, TriggerKind::FullComm)?;
    for &a in &cfg.alphas {
        cmd_simulate(cfg, a, TriggerKind::Exact)?;
    }
    for &a in &fitted {
        cmd_bounds(cfg, a)?;
        cmd_simulate(cfg, a, TriggerKind::Svr)?;
    }
    Ok((cmd_report(cfg)?, failures))
}
