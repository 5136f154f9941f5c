//! Layered run configuration.
//!
//! Values are resolved from, lowest to highest precedence: built-in
//! defaults, the TOML config file, `R2BC_*` environment variables, then
//! command-line flags. Unknown keys are rejected at every layer.
//!
//! Environment variables name a key as `R2BC_<SECTION>__<KEY>` (or
//! `R2BC_<KEY>` for top-level keys), e.g. `R2BC_TRAIN__LEARNING_RATE=3e-4`.
//! Values are read as TOML scalars, falling back to a plain string.

use r2bc::algorithms::{AlgoConfig, Algorithm};
use r2bc::eval::BudgetAccounting;
use r2bc::policy::TrainConfig;
use r2bc::sim::{EnvConfig, TaskId};
use r2bc_teleop::{Mode, SessionConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "R2BC_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub task: TaskId,
    /// Episode length; the task default when absent.
    pub horizon: Option<u32>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { task: TaskId::Navigation, horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    pub algorithm: Algorithm,
    pub demo_budget: usize,
    pub update_freq_k: usize,
    pub dart_sigma: f64,
    pub warm_start: bool,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let d = AlgoConfig::default();
        Self { algorithm: d.algorithm, demo_budget: d.demo_budget, update_freq_k: d.update_freq_k, dart_sigma: d.dart_sigma, warm_start: d.warm_start }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    pub noise_sigma: f64,
}

impl Default for ExpertSection {
    fn default() -> Self {
        Self { noise_sigma: r2bc::experts::DEFAULT_NOISE_SIGMA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluation seeds `0..n_seeds`.
    pub n_seeds: usize,
    pub tasks: Vec<TaskId>,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<usize>,
    /// Training seeds of a sweep: `seed..seed + sweep_seeds`.
    pub sweep_seeds: u64,
    pub accounting: BudgetAccounting,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_seeds: r2bc::eval::DEFAULT_EVAL_SEEDS,
            tasks: vec![TaskId::Navigation],
            algorithms: Algorithm::ALL.to_vec(),
            budgets: vec![12, 24, 48, 96, 192, 240],
            sweep_seeds: 10,
            accounting: BudgetAccounting::Episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub addr: String,
    pub mode: Mode,
    pub episodes: usize,
    pub tick_hz: f64,
    pub sync: bool,
    pub intervention_budget: u32,
    pub intervention_secs: f64,
    /// Checkpoint directory driving the agents in evaluation mode.
    pub policies: Option<PathBuf>,
    /// Stop after this many client sessions.
    pub max_sessions: Option<usize>,
}

impl Default for ServeSection {
    fn default() -> Self {
        let s = SessionConfig::default();
        Self {
            addr: "127.0.0.1:8765".into(),
            mode: s.mode,
            episodes: s.episodes,
            tick_hz: s.tick_hz,
            sync: s.sync,
            intervention_budget: s.intervention_budget,
            intervention_secs: s.intervention_secs,
            policies: None,
            max_sessions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub env: EnvSection,
    pub algo: AlgoSection,
    pub train: TrainConfig,
    pub expert: ExpertSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            seed: 0,
            jobs: 1,
            env: EnvSection::default(),
            algo: AlgoSection::default(),
            train: TrainConfig::default(),
            expert: ExpertSection::default(),
            eval: EvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn env_config(&self) -> EnvConfig {
        let mut env = EnvConfig::for_task(self.env.task);
        if let Some(h) = self.env.horizon {
            env.horizon = h;
        }
        env
    }

    pub fn algo_config(&self) -> AlgoConfig {
        AlgoConfig {
            algorithm: self.algo.algorithm,
            demo_budget: self.algo.demo_budget,
            update_freq_k: self.algo.update_freq_k,
            dart_sigma: self.algo.dart_sigma,
            seed: self.seed,
            warm_start: self.algo.warm_start,
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            mode: self.serve.mode,
            episodes: self.serve.episodes,
            tick_hz: self.serve.tick_hz,
            sync: self.serve.sync,
            intervention_budget: self.serve.intervention_budget,
            intervention_secs: self.serve.intervention_secs,
            demonstrator_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let env = self.env_config();
        env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.algo_config().validate(env.n_agents).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.expert.noise_sigma >= 0.0 && self.expert.noise_sigma.is_finite()) {
            return Err(ConfigError::Invalid("expert.noise_sigma must be finite and >= 0".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be >= 1".into()));
        }
        if self.eval.n_seeds == 0 {
            return Err(ConfigError::Invalid("eval.n_seeds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Deep merge: tables merge key by key, anything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn scalar(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Table holding `value` at a dotted path.
pub fn nested(path: &str, value: Value) -> Table {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty path");
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(table));
        table = outer;
    }
    table
}

/// `key=value` with a dotted key.
pub fn parse_override(s: &str) -> Result<Table, ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.into()))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ConfigError::Override(s.into()));
    }
    Ok(nested(k, scalar(v.trim())))
}

/// Overrides from `R2BC_*` variables in `vars`.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Table {
    let mut out = Table::new();
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (k, v) in vars {
        let path = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
        merge(&mut out, nested(&path, scalar(&v)));
    }
    out
}

/// Resolves defaults < `file` < `env` < `flags`.
pub fn resolve(file: Option<&Path>, env: Table, flags: Vec<Table>) -> Result<RunConfig, ConfigError> {
    let mut table = Table::try_from(RunConfig::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), msg: e.to_string() })?;
        let parsed: Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        merge(&mut table, parsed);
    }
    merge(&mut table, env);
    for f in flags {
        merge(&mut table, f);
    }
    let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
