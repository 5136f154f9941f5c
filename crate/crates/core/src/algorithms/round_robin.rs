use super::collect::{concat_obs, demo_loss, run_episode, training_set, FitTarget, NoiseStats};
use super::{init_net, AlgoConfig, AlgoError, Algorithm, EpisodeLog, FitLog, PolicySet, RunLog, RunOutput, Snapshot};
use crate::demo::{AgentSlot, Dataset, DatasetHeader, Layout, Source, TransitionRecord, DATASET_SCHEMA};
use crate::experts::ExpertPolicy;
use crate::policy::{train_to_plateau, Scalar};
use crate::rng::{episode_seed, stream_rng, sub_seed, Stream};
use crate::sim::{AgentAction, AgentObservation, EnvConfig, JointAction};
use rand::Rng as _;

/// Round-robin demonstration bookkeeping shared by the scripted runs and
/// the teleoperation service.
///
/// Episode `e` is demonstrated on agent `e mod N` while the other agents
/// run their current policies. A finished episode is committed as a whole
/// to the demonstrated agent's buffer; an abandoned one is simply never
/// committed and is replayed with the same reset seed.
#[derive(Debug, Clone)]
pub struct RoundRobin<S> {
    env: EnvConfig,
    cfg: AlgoConfig,
    policies: PolicySet<S>,
    dataset: Dataset,
    log: RunLog,
    fits: u64,
    unfit_episodes: usize,
}

impl<S: Scalar> RoundRobin<S> {
    pub fn new(env: &EnvConfig, cfg: &AlgoConfig, expert_sigma: f64, source_tag: &str) -> Result<Self, AlgoError> {
        env.validate()?;
        cfg.validate(env.n_agents)?;
        if !cfg.algorithm.is_round_robin() {
            return Err(AlgoError::Config(format!("{} is not a round-robin method", cfg.algorithm)));
        }
        let header = DatasetHeader {
            schema_version: DATASET_SCHEMA,
            task: env.task,
            n_agents: env.n_agents,
            obs_dim: env.obs_dim(),
            act_dim: 2,
            horizon: env.horizon,
            expert_sigma,
            seed: cfg.seed,
            algorithm: source_tag.to_string(),
            layout: cfg.algorithm.layout(),
        };
        Ok(Self {
            env: env.clone(),
            cfg: cfg.clone(),
            policies: PolicySet::init(env, cfg.algorithm, &cfg.train, cfg.seed)?,
            dataset: Dataset::empty(header),
            log: RunLog::default(),
            fits: 0,
            unfit_episodes: 0,
        })
    }

    /// Committed episodes so far.
    pub fn episodes(&self) -> usize {
        self.log.episodes.len()
    }

    /// Agent demonstrated in the next episode.
    pub fn demo_agent(&self) -> usize {
        self.episodes() % self.env.n_agents
    }

    /// Reset seed of the next episode.
    pub fn episode_seed(&self) -> u64 {
        episode_seed(self.cfg.seed, self.episodes() as u64)
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cfg
    }

    pub fn policies(&self) -> &PolicySet<S> {
        &self.policies
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    /// Refit rounds performed so far.
    pub fn fits(&self) -> u64 {
        self.fits
    }

    /// Current policies' joint action.
    pub fn learner_actions(&self, observations: &[AgentObservation]) -> Result<JointAction, AlgoError> {
        self.policies.act(observations)
    }

    /// Record of the demonstrated agent's action at tick `t`.
    pub fn record(&self, t: u32, observations: &[AgentObservation], action: AgentAction, source: Source) -> TransitionRecord {
        let agent = self.demo_agent();
        let obs = match self.dataset.header.layout {
            Layout::Centralized => concat_obs(observations),
            _ => observations[agent].0.clone(),
        };
        TransitionRecord {
            episode_id: self.episodes() as u64,
            agent: AgentSlot::Agent(agent),
            t,
            obs,
            action: action.0.to_vec(),
            source,
            executed: None,
        }
    }

    /// Appends a finished episode, advances the round-robin and refits when
    /// a cycle completes on the update schedule.
    pub fn commit_episode(&mut self, records: Vec<TransitionRecord>, episode_return: f64) -> Result<(), AlgoError> {
        let slot = AgentSlot::Agent(self.demo_agent());
        let episode = self.episodes() as u64;
        if let Some(r) = records.iter().find(|r| r.agent != slot || r.episode_id != episode) {
            return Err(AlgoError::Config(format!(
                "record for agent {} episode {} committed to agent {slot} episode {episode}",
                r.agent, r.episode_id
            )));
        }
        self.dataset.buffer_mut(slot).expect("slot exists for layout").append_episode(records)?;
        self.unfit_episodes += 1;
        let n = self.env.n_agents;
        let done = self.episodes() + 1;
        if self.cfg.algorithm.is_online() && done.is_multiple_of(n) && (done / n).is_multiple_of(self.cfg.update_freq_k) {
            let logs = fit(&mut self.policies, &self.dataset, &self.cfg, self.fits, done)?;
            self.log.fits.extend(logs);
            self.fits += 1;
            self.unfit_episodes = 0;
        }
        self.log.episodes.push(EpisodeLog {
            episode_id: episode,
            demo_agent: Some(slot_index(slot)),
            episode_return,
            buffer_sizes: self.dataset.buffers.iter().map(|b| b.len()).collect(),
            refits: self.fits as usize,
        });
        Ok(())
    }

    /// Final fit over demonstrations not yet trained on.
    pub fn finish(&mut self) -> Result<(), AlgoError> {
        if self.unfit_episodes > 0 {
            let done = self.episodes();
            let logs = fit(&mut self.policies, &self.dataset, &self.cfg, self.fits, done)?;
            self.log.fits.extend(logs);
            self.fits += 1;
            self.unfit_episodes = 0;
            if let Some(ep) = self.log.episodes.last_mut() {
                ep.refits = self.fits as usize;
            }
        }
        Ok(())
    }

    /// Policies a run ending now would return, without disturbing this one.
    pub fn snapshot(&self) -> Result<Snapshot<S>, AlgoError> {
        let mut policies = self.policies.clone();
        if self.unfit_episodes > 0 {
            fit(&mut policies, &self.dataset, &self.cfg, self.fits, self.episodes())?;
        }
        let train_loss = demo_loss(&policies, &self.dataset)?;
        Ok(Snapshot { budget: self.episodes(), policies, train_loss })
    }

    pub fn into_parts(self) -> (PolicySet<S>, Dataset, RunLog) {
        (self.policies, self.dataset, self.log)
    }
}

fn slot_index(slot: AgentSlot) -> usize {
    match slot {
        AgentSlot::Agent(i) => i,
        AgentSlot::Joint => 0,
    }
}

/// Fits every network on its share of `dataset`. Fit round `fit_index`
/// shuffles with its own stream, so the same round on the same data always
/// produces the same weights.
pub(crate) fn fit<S: Scalar>(policies: &mut PolicySet<S>, dataset: &Dataset, cfg: &AlgoConfig, fit_index: u64, after: usize) -> Result<Vec<FitLog>, AlgoError> {
    let n = dataset.header.n_agents;
    let mut logs = Vec::new();
    let targets: Vec<(FitTarget, usize, Option<usize>)> = match policies {
        PolicySet::Decentralized(nets) => (0..nets.len()).map(|i| (FitTarget::Agent(i), i, Some(i))).collect(),
        PolicySet::Centralized(_) => vec![(FitTarget::Centralized, n, None)],
    };
    for (target, index, agent) in targets {
        let Some(set) = training_set::<S>(dataset, target)? else { continue };
        let net = match policies {
            PolicySet::Decentralized(nets) => &mut nets[index],
            PolicySet::Centralized(net) => net,
        };
        if !cfg.warm_start {
            *net = init_net(net.input_dim(), net.output_dim(), cfg.train.weight_init_scale, sub_seed(cfg.seed, index as u64))?;
        }
        let mut rng = stream_rng(cfg.seed, Stream::Shuffle, fit_index * 1024 + index as u64);
        let stats = train_to_plateau(net, &set, &cfg.train, &mut rng)?;
        logs.push(FitLog {
            after_episodes: after,
            agent,
            samples: set.len(),
            epochs: stats.epochs,
            initial_loss: stats.initial_loss,
            final_loss: stats.final_loss,
        });
    }
    Ok(logs)
}

pub(super) fn run_round_robin<S: Scalar>(env: &EnvConfig, expert: &ExpertPolicy, cfg: &AlgoConfig, marks: &[usize]) -> Result<RunOutput<S>, AlgoError> {
    let n = env.n_agents;
    let mut rr = RoundRobin::<S>::new(env, cfg, expert.noise_sigma, cfg.algorithm.as_str())?;
    let mut snapshots = Vec::new();
    let mut passive = NoiseStats::default();
    while rr.episodes() < cfg.demo_budget {
        let e = rr.episodes() as u64;
        let demo = rr.demo_agent();
        let mut noise = stream_rng(cfg.seed, Stream::ExpertNoise, e);
        let mut passive_rng = stream_rng(cfg.seed, Stream::PassiveRandom, e);
        let mut records = Vec::new();
        let ret = run_episode(env, rr.episode_seed(), |t, obs| {
            let a = expert.expert_single(&obs[demo], demo, &mut noise)?;
            records.push(rr.record(t, obs, a, Source::ExpertSingle));
            let mut actions = match cfg.algorithm {
                Algorithm::OfflineR2bcNoop => vec![AgentAction::ZERO; n],
                Algorithm::OfflineR2bcRandom => (0..n)
                    .map(|j| {
                        if j == demo {
                            return AgentAction::ZERO;
                        }
                        let x = passive_rng.gen_range(-1.0..=1.0);
                        let y = passive_rng.gen_range(-1.0..=1.0);
                        passive.push(x);
                        passive.push(y);
                        AgentAction::new(x, y)
                    })
                    .collect(),
                _ => rr.learner_actions(obs)?.per_agent,
            };
            actions[demo] = a;
            Ok(JointAction::new(actions))
        })?;
        rr.commit_episode(records, ret)?;
        if rr.episodes() < cfg.demo_budget && marks.contains(&rr.episodes()) {
            snapshots.push(rr.snapshot()?);
        }
    }
    rr.finish()?;
    if marks.contains(&cfg.demo_budget) {
        let train_loss = demo_loss(rr.policies(), rr.dataset())?;
        snapshots.push(Snapshot { budget: cfg.demo_budget, policies: rr.policies().clone(), train_loss });
    }
    let (policies, dataset, log) = rr.into_parts();
    Ok(RunOutput {
        policies,
        dataset,
        log,
        snapshots,
        injected_noise: None,
        passive_actions: (cfg.algorithm == Algorithm::OfflineR2bcRandom).then_some(passive),
    })
}
