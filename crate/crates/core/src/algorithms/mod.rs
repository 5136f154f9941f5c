//! Round-robin behavior cloning and its baselines.
//!
//! | algorithm            | demonstrations                        | policies      | fits        |
//! |----------------------|---------------------------------------|---------------|-------------|
//! | `r2bc`               | one agent per episode, round-robin     | one per agent | every k cycles |
//! | `jbc`                | all agents, joint expert              | centralized   | once        |
//! | `dec_jbc`            | same joint data, sliced per agent     | one per agent | once        |
//! | `dagger`             | learner rollouts, joint expert labels | centralized   | every k iterations |
//! | `dart`               | joint expert with injected noise      | centralized   | once        |
//! | `offline_r2bc_noop`  | round-robin, others idle              | one per agent | once        |
//! | `offline_r2bc_random`| round-robin, others uniform random    | one per agent | once        |
//! | `centralized_r2bc`   | round-robin, masked loss              | centralized   | every k cycles |
//!
//! A cycle (round-robin) or iteration (DAgger) is `N` episodes. Refits
//! happen after cycle `c` when `(c + 1) % k == 0`; a run whose budget ends
//! mid-cycle gets one last fit so every demonstration is used.
//!
//! Every episode draws its reset seed and its noise streams from
//! `(run seed, episode index)`, so a run with budget `b` is a prefix of any
//! longer run with the same seed. Runs can therefore emit policy
//! snapshots at several budgets; each snapshot is identical to the final
//! policy of a run stopped at that budget.

mod collect;
mod joint;
mod round_robin;

pub use collect::{demo_loss, run_episode, training_set, FitTarget, NoiseStats};
pub use round_robin::RoundRobin;

use crate::demo::{Dataset, DatasetError, Layout};
use crate::experts::{ExpertError, ExpertPolicy};
use crate::policy::{CheckpointError, PolicyError, PolicyNet, Scalar, TrainConfig};
use crate::rng::sub_seed;
use crate::sim::{AgentAction, AgentObservation, EnvConfig, JointAction, SimError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgoError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid algorithm config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    R2bc,
    Jbc,
    DecJbc,
    Dagger,
    Dart,
    OfflineR2bcNoop,
    OfflineR2bcRandom,
    CentralizedR2bc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::R2bc,
        Algorithm::Jbc,
        Algorithm::DecJbc,
        Algorithm::Dagger,
        Algorithm::Dart,
        Algorithm::OfflineR2bcNoop,
        Algorithm::OfflineR2bcRandom,
        Algorithm::CentralizedR2bc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::R2bc => "r2bc",
            Algorithm::Jbc => "jbc",
            Algorithm::DecJbc => "dec_jbc",
            Algorithm::Dagger => "dagger",
            Algorithm::Dart => "dart",
            Algorithm::OfflineR2bcNoop => "offline_r2bc_noop",
            Algorithm::OfflineR2bcRandom => "offline_r2bc_random",
            Algorithm::CentralizedR2bc => "centralized_r2bc",
        }
    }

    /// One demonstrator controls one agent per episode.
    pub fn is_round_robin(self) -> bool {
        matches!(
            self,
            Algorithm::R2bc | Algorithm::OfflineR2bcNoop | Algorithm::OfflineR2bcRandom | Algorithm::CentralizedR2bc
        )
    }

    /// Policies are refit while demonstrations are being collected.
    pub fn is_online(self) -> bool {
        matches!(self, Algorithm::R2bc | Algorithm::Dagger | Algorithm::CentralizedR2bc)
    }

    pub fn is_centralized(self) -> bool {
        matches!(self, Algorithm::Jbc | Algorithm::Dagger | Algorithm::Dart | Algorithm::CentralizedR2bc)
    }

    pub fn layout(self) -> Layout {
        match self {
            Algorithm::R2bc | Algorithm::OfflineR2bcNoop | Algorithm::OfflineR2bcRandom => Layout::PerAgent,
            Algorithm::CentralizedR2bc => Layout::Centralized,
            Algorithm::Jbc | Algorithm::DecJbc | Algorithm::Dagger | Algorithm::Dart => Layout::Joint,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| AlgoError::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    /// Demonstrated episodes (single-agent episodes for round-robin methods,
    /// joint episodes otherwise).
    pub demo_budget: usize,
    /// Cycles between refits for online methods.
    pub update_freq_k: usize,
    pub dart_sigma: f64,
    pub seed: u64,
    /// Refits continue from the current weights; `false` re-initializes
    /// each network before every fit.
    pub warm_start: bool,
    pub train: TrainConfig,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::R2bc,
            demo_budget: 48,
            update_freq_k: 1,
            dart_sigma: 0.1,
            seed: 0,
            warm_start: true,
            train: TrainConfig::default(),
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self, n_agents: usize) -> Result<(), AlgoError> {
        if self.demo_budget == 0 {
            return Err(AlgoError::Config("demo_budget must be >= 1".into()));
        }
        if self.algorithm.is_round_robin() && self.demo_budget < n_agents {
            return Err(AlgoError::Config(format!(
                "{} needs demo_budget >= {n_agents} (one episode per agent)",
                self.algorithm
            )));
        }
        if self.update_freq_k == 0 {
            return Err(AlgoError::Config("update_freq_k must be >= 1".into()));
        }
        if !(self.dart_sigma >= 0.0 && self.dart_sigma.is_finite()) {
            return Err(AlgoError::Config("dart_sigma must be finite and >= 0".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Learned policies of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySet<S> {
    /// One network per agent over its own observation.
    Decentralized(Vec<PolicyNet<S>>),
    /// One network over concatenated observations, emitting the joint action.
    Centralized(PolicyNet<S>),
}

impl<S: Scalar> PolicySet<S> {
    /// Freshly initialized networks for `algorithm` on `env`; network `i`
    /// draws its weights from `sub_seed(seed, i)`.
    pub fn init(env: &EnvConfig, algorithm: Algorithm, train: &TrainConfig, seed: u64) -> Result<Self, AlgoError> {
        let n = env.n_agents;
        let od = env.obs_dim();
        if algorithm.is_centralized() {
            Ok(PolicySet::Centralized(init_net(n * od, 2 * n, train.weight_init_scale, sub_seed(seed, n as u64))?))
        } else {
            let nets = (0..n).map(|i| init_net(od, 2, train.weight_init_scale, sub_seed(seed, i as u64))).collect::<Result<_, _>>()?;
            Ok(PolicySet::Decentralized(nets))
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            PolicySet::Decentralized(nets) => nets.len(),
            PolicySet::Centralized(net) => net.output_dim() / 2,
        }
    }

    /// Greedy joint action.
    pub fn act(&self, observations: &[AgentObservation]) -> Result<JointAction, AlgoError> {
        if observations.len() != self.n_agents() {
            return Err(PolicyError::DimMismatch { what: "agent count", expected: self.n_agents(), got: observations.len() }.into());
        }
        match self {
            PolicySet::Decentralized(nets) => {
                let actions = nets
                    .iter()
                    .zip(observations)
                    .map(|(net, o)| net.forward(o).map(|y| AgentAction::new(y[0], y[1])))
                    .collect::<Result<_, _>>()?;
                Ok(JointAction::new(actions))
            }
            PolicySet::Centralized(net) => Ok(JointAction::from_flat(&net.forward(&collect::concat_obs(observations))?)),
        }
    }

    pub fn nets(&self) -> Vec<&PolicyNet<S>> {
        match self {
            PolicySet::Decentralized(nets) => nets.iter().collect(),
            PolicySet::Centralized(net) => vec![net],
        }
    }

    /// Writes `joint.policy` or `agent_<i>.policy` files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), AlgoError> {
        std::fs::create_dir_all(dir).map_err(|e| CheckpointError::Io(format!("{}: {e}", dir.display())))?;
        match self {
            PolicySet::Decentralized(nets) => {
                for (i, net) in nets.iter().enumerate() {
                    net.save(&dir.join(format!("agent_{i}.policy")))?;
                }
            }
            PolicySet::Centralized(net) => net.save(&dir.join("joint.policy"))?,
        }
        Ok(())
    }

    /// Reads what [`PolicySet::save`] wrote for `n_agents` agents.
    pub fn load(dir: &Path, n_agents: usize) -> Result<Self, AlgoError> {
        let joint = dir.join("joint.policy");
        if joint.exists() {
            return Ok(PolicySet::Centralized(PolicyNet::load(&joint)?));
        }
        let nets = (0..n_agents)
            .map(|i| PolicyNet::load(&dir.join(format!("agent_{i}.policy"))))
            .collect::<Result<_, _>>()?;
        Ok(PolicySet::Decentralized(nets))
    }
}

pub(crate) fn init_net<S: Scalar>(input: usize, output: usize, init_scale: f64, seed: u64) -> Result<PolicyNet<S>, AlgoError> {
    let sizes = [input, crate::policy::DEFAULT_HIDDEN[0], crate::policy::DEFAULT_HIDDEN[1], output];
    Ok(PolicyNet::new(&sizes, init_scale, seed)?)
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_id: u64,
    /// Demonstrated agent for round-robin methods.
    pub demo_agent: Option<usize>,
    pub episode_return: f64,
    /// Records per buffer after the episode.
    pub buffer_sizes: Vec<usize>,
    /// Refit rounds completed after the episode.
    pub refits: usize,
}

/// Summary of one network fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub after_episodes: usize,
    /// Agent index, or `None` for a centralized network.
    pub agent: Option<usize>,
    pub samples: usize,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub episodes: Vec<EpisodeLog>,
    pub fits: Vec<FitLog>,
}

impl RunLog {
    pub fn episodes_jsonl(&self) -> String {
        lines(&self.episodes)
    }

    pub fn fits_jsonl(&self) -> String {
        lines(&self.fits)
    }
}

fn lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("log entries serialize"));
        out.push('\n');
    }
    out
}

/// Policies as they stood after `budget` demonstrated episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<S> {
    pub budget: usize,
    pub policies: PolicySet<S>,
    /// [`demo_loss`] of these policies on the demonstrations collected so far.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput<S> {
    pub policies: PolicySet<S>,
    pub dataset: Dataset,
    pub log: RunLog,
    /// Requested snapshots in increasing budget order.
    pub snapshots: Vec<Snapshot<S>>,
    /// Noise injected by DART.
    pub injected_noise: Option<NoiseStats>,
    /// Actions of passive agents in the offline random variant.
    pub passive_actions: Option<NoiseStats>,
}

/// Runs `cfg.algorithm`, taking snapshots after each episode count in
/// `snapshot_budgets` that does not exceed the budget.
pub fn run<S: Scalar>(env: &EnvConfig, expert: &ExpertPolicy, cfg: &AlgoConfig, snapshot_budgets: &[usize]) -> Result<RunOutput<S>, AlgoError> {
    env.validate()?;
    cfg.validate(env.n_agents)?;
    if expert.env != *env {
        return Err(AlgoError::Config("expert was built for a different environment".into()));
    }
    let mut marks: Vec<usize> = snapshot_budgets.iter().copied().filter(|&b| b >= 1 && b <= cfg.demo_budget).collect();
    marks.sort_unstable();
    marks.dedup();
    match cfg.algorithm {
        Algorithm::R2bc | Algorithm::CentralizedR2bc | Algorithm::OfflineR2bcNoop | Algorithm::OfflineR2bcRandom => {
            round_robin::run_round_robin(env, expert, cfg, &marks)
        }
        Algorithm::Jbc | Algorithm::DecJbc | Algorithm::Dart => joint::run_offline_joint(env, expert, cfg, &marks),
        Algorithm::Dagger => joint::run_dagger(env, expert, cfg, &marks),
    }
}

/// Fits freshly initialized policies for `cfg.algorithm` on a stored
/// dataset in one offline round.
pub fn train_offline<S: Scalar>(env: &EnvConfig, cfg: &AlgoConfig, dataset: &Dataset) -> Result<(PolicySet<S>, Vec<FitLog>), AlgoError> {
    cfg.train.validate()?;
    let h = &dataset.header;
    if h.task != env.task || h.n_agents != env.n_agents || h.obs_dim != env.obs_dim() {
        return Err(AlgoError::Config(format!("dataset is for {} with {} agents, not {} with {}", h.task, h.n_agents, env.task, env.n_agents)));
    }
    if h.layout != cfg.algorithm.layout() {
        return Err(AlgoError::Config(format!("{} cannot train on a {:?} dataset", cfg.algorithm, h.layout)));
    }
    let mut policies = PolicySet::init(env, cfg.algorithm, &cfg.train, cfg.seed)?;
    let episodes = dataset.buffers.iter().map(|b| b.episode_count()).sum();
    let logs = round_robin::fit(&mut policies, dataset, cfg, 0, episodes)?;
    Ok((policies, logs))
}
