//! Transport-independent session state machine.
//!
//! The server feeds parsed client messages to [`Session::handle`] and calls
//! [`Session::tick`] once per physics step: on a timer in real-time mode,
//! or whenever [`Session::ready_to_step`] holds in synchronous mode.

use crate::protocol::{agent_views, object_views, ClientKind, ClientMessage, ErrorCode, InterventionEvent, Mode, ProtocolError, ServerMessage, PROTOCOL_VERSION};
use r2bc::algorithms::{train_offline, AlgoConfig, AlgoError, FitLog, PolicySet, RoundRobin, RunLog};
use r2bc::demo::{AgentSlot, Dataset, DatasetHeader, Layout, Source, TransitionRecord, DATASET_SCHEMA};
use r2bc::rng::episode_seed;
use r2bc::sim::{joint_observe, reset, step, AgentAction, EnvConfig, JointAction, WorldState};
use r2bc::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Episodes to record (demonstration modes) or to play (evaluation).
    pub episodes: usize,
    pub tick_hz: f64,
    /// Advance only when the client has supplied the actions for a tick.
    pub sync: bool,
    /// Interventions allowed per evaluation episode.
    pub intervention_budget: u32,
    pub intervention_secs: f64,
    /// Noise level written into the dataset header.
    pub demonstrator_sigma: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::R2bcDemo,
            episodes: 48,
            tick_hz: 20.0,
            sync: false,
            intervention_budget: 2,
            intervention_secs: 3.0,
            demonstrator_sigma: 0.0,
        }
    }
}

impl SessionConfig {
    pub fn intervention_ticks(&self) -> u32 {
        (self.intervention_secs * self.tick_hz).round() as u32
    }
}

enum Inner<S> {
    RoundRobin(RoundRobin<S>),
    Joint { dataset: Dataset, policies: Option<PolicySet<S>>, fits: Vec<FitLog>, returns: Vec<f64> },
    Eval { policies: PolicySet<S>, returns: Vec<f64> },
}

struct Episode {
    id: u64,
    state: WorldState,
    held: Vec<AgentAction>,
    fresh: Vec<bool>,
    records: Vec<TransitionRecord>,
    total: f64,
    reward: f64,
}

struct Intervention {
    agent: usize,
    ticks_left: u32,
}

pub struct Session<S> {
    cfg: SessionConfig,
    env: EnvConfig,
    algo: AlgoConfig,
    client: Option<ClientKind>,
    inner: Inner<S>,
    episode: Option<Episode>,
    interventions_left: u32,
    intervention: Option<Intervention>,
    intervention_log: Vec<InterventionEvent>,
    discarded: Vec<u64>,
    done: bool,
}

impl<S: Scalar> Session<S> {
    /// A demonstration session (`r2bc_demo` with a round-robin algorithm,
    /// `jbc_demo` with a joint one) or an evaluation session over `policies`.
    pub fn new(cfg: SessionConfig, env: EnvConfig, algo: AlgoConfig, policies: Option<PolicySet<S>>) -> Result<Self, SessionError> {
        env.validate().map_err(AlgoError::from)?;
        if !(cfg.tick_hz > 0.0 && cfg.tick_hz.is_finite()) || cfg.episodes == 0 || cfg.intervention_secs < 0.0 {
            return Err(SessionError::Config("tick_hz > 0, episodes >= 1 and intervention_secs >= 0 required".into()));
        }
        let mut algo = algo;
        let inner = match cfg.mode {
            Mode::R2bcDemo => {
                if !algo.algorithm.is_round_robin() {
                    return Err(SessionError::Config(format!("r2bc_demo needs a round-robin algorithm, not {}", algo.algorithm)));
                }
                algo.demo_budget = cfg.episodes;
                Inner::RoundRobin(RoundRobin::new(&env, &algo, cfg.demonstrator_sigma, algo.algorithm.as_str())?)
            }
            Mode::JbcDemo => {
                if algo.algorithm.layout() != Layout::Joint {
                    return Err(SessionError::Config(format!("jbc_demo needs a joint-demonstration algorithm, not {}", algo.algorithm)));
                }
                algo.demo_budget = cfg.episodes;
                algo.validate(env.n_agents)?;
                let header = DatasetHeader {
                    schema_version: DATASET_SCHEMA,
                    task: env.task,
                    n_agents: env.n_agents,
                    obs_dim: env.obs_dim(),
                    act_dim: 2,
                    horizon: env.horizon,
                    expert_sigma: cfg.demonstrator_sigma,
                    seed: algo.seed,
                    algorithm: algo.algorithm.as_str().to_string(),
                    layout: Layout::Joint,
                };
                Inner::Joint { dataset: Dataset::empty(header), policies: None, fits: vec![], returns: vec![] }
            }
            Mode::EvalWithInterventions => {
                let policies = policies.ok_or_else(|| SessionError::Config("evaluation needs policies".into()))?;
                if policies.n_agents() != env.n_agents {
                    return Err(SessionError::Config(format!("policies drive {} agents, task has {}", policies.n_agents(), env.n_agents)));
                }
                Inner::Eval { policies, returns: vec![] }
            }
        };
        Ok(Self {
            interventions_left: if cfg.mode == Mode::EvalWithInterventions { cfg.intervention_budget } else { 0 },
            cfg,
            env,
            algo,
            client: None,
            inner,
            episode: None,
            intervention: None,
            intervention_log: vec![],
            discarded: vec![],
            done: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            protocol: PROTOCOL_VERSION,
            mode: self.cfg.mode,
            task: self.env.task.as_str().to_string(),
            n_agents: self.env.n_agents,
            tick_hz: self.cfg.tick_hz,
            sync: self.cfg.sync,
        }
    }

    /// Finished episodes, recorded or played.
    pub fn episodes_done(&self) -> usize {
        match &self.inner {
            Inner::RoundRobin(rr) => rr.episodes(),
            Inner::Joint { dataset, .. } => dataset.buffers[0].episode_count(),
            Inner::Eval { returns, .. } => returns.len(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn in_episode(&self) -> bool {
        self.episode.is_some()
    }

    /// Agent assigned to the human in the next or current episode.
    pub fn demo_agent(&self) -> Option<usize> {
        match &self.inner {
            Inner::RoundRobin(rr) => Some(rr.demo_agent()),
            _ => None,
        }
    }

    pub fn interventions_left(&self) -> u32 {
        self.interventions_left
    }

    pub fn intervention_log(&self) -> &[InterventionEvent] {
        &self.intervention_log
    }

    /// Episode ids abandoned by the client or lost to a disconnect.
    pub fn discarded(&self) -> &[u64] {
        &self.discarded
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        match &self.inner {
            Inner::RoundRobin(rr) => Some(rr.dataset()),
            Inner::Joint { dataset, .. } => Some(dataset),
            Inner::Eval { .. } => None,
        }
    }

    pub fn policies(&self) -> Option<&PolicySet<S>> {
        match &self.inner {
            Inner::RoundRobin(rr) => Some(rr.policies()),
            Inner::Joint { policies, .. } => policies.as_ref(),
            Inner::Eval { policies, .. } => Some(policies),
        }
    }

    pub fn returns(&self) -> Vec<f64> {
        match &self.inner {
            Inner::RoundRobin(rr) => rr.log().episodes.iter().map(|e| e.episode_return).collect(),
            Inner::Joint { returns, .. } | Inner::Eval { returns, .. } => returns.clone(),
        }
    }

    fn source(&self) -> Source {
        match (self.client, self.cfg.mode) {
            (Some(ClientKind::Script), Mode::JbcDemo) => Source::ExpertJoint,
            (Some(ClientKind::Script), _) => Source::ExpertSingle,
            _ => Source::HumanTeleop,
        }
    }

    fn next_seed(&self) -> u64 {
        let e = self.episodes_done() as u64;
        match &self.inner {
            Inner::RoundRobin(rr) => rr.episode_seed(),
            Inner::Joint { .. } => episode_seed(self.algo.seed, e),
            Inner::Eval { .. } => e,
        }
    }

    /// Applies one client message.
    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match self.try_handle(msg) {
            Ok(out) => out,
            Err(e) => vec![e.to_message()],
        }
    }

    fn try_handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, ProtocolError> {
        if let ClientMessage::Hello { client, protocol } = msg {
            if protocol != PROTOCOL_VERSION {
                return Err(ProtocolError::new(ErrorCode::ProtocolMismatch, format!("server speaks protocol {PROTOCOL_VERSION}, client {protocol}")));
            }
            self.client = Some(client);
            return Ok(vec![self.hello()]);
        }
        if self.client.is_none() {
            return Err(ProtocolError::new(ErrorCode::NotReady, "send hello first"));
        }
        match msg {
            ClientMessage::Hello { .. } => unreachable!("handled above"),
            ClientMessage::EpisodeStart {} => self.start_episode(),
            ClientMessage::EpisodeEnd {} => Ok(self.abandon().into_iter().collect()),
            ClientMessage::Action { agent_id, action } => {
                let n = self.env.n_agents;
                let demo = self.demo_agent();
                let intervened = self.intervention.as_ref().map(|i| i.agent);
                let ep = self.episode.as_mut().ok_or_else(|| ProtocolError::new(ErrorCode::NotReady, "no episode running"))?;
                if agent_id >= n {
                    return Err(ProtocolError::new(ErrorCode::BadAgent, format!("agent {agent_id} does not exist")));
                }
                let allowed = match self.cfg.mode {
                    Mode::R2bcDemo => demo == Some(agent_id),
                    Mode::JbcDemo => true,
                    Mode::EvalWithInterventions => intervened == Some(agent_id),
                };
                if !allowed {
                    return Err(ProtocolError::new(ErrorCode::BadAgent, format!("agent {agent_id} is not under human control")));
                }
                ep.held[agent_id] = AgentAction(action);
                ep.fresh[agent_id] = true;
                Ok(vec![])
            }
            ClientMessage::InterveneStart { agent_id } => {
                if self.cfg.mode != Mode::EvalWithInterventions {
                    return Err(ProtocolError::new(ErrorCode::WrongMode, "interventions exist only during evaluation"));
                }
                if agent_id >= self.env.n_agents {
                    return Err(ProtocolError::new(ErrorCode::BadAgent, format!("agent {agent_id} does not exist")));
                }
                if self.interventions_left == 0 {
                    return Err(ProtocolError::new(ErrorCode::NoInterventionsLeft, "intervention budget used up"));
                }
                if self.intervention.is_some() {
                    return Err(ProtocolError::new(ErrorCode::NotReady, "an intervention is already running"));
                }
                let ep = self.episode.as_mut().ok_or_else(|| ProtocolError::new(ErrorCode::NotReady, "no episode running"))?;
                let ticks = self.cfg.intervention_ticks();
                ep.held[agent_id] = AgentAction::ZERO;
                self.interventions_left -= 1;
                self.intervention = Some(Intervention { agent: agent_id, ticks_left: ticks });
                self.intervention_log.push(InterventionEvent {
                    agent_id,
                    episode: ep.id,
                    start_tick: ep.state.tick,
                    unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
                });
                Ok(vec![ServerMessage::InterveneStart { agent_id, ticks }])
            }
            ClientMessage::InterveneEnd { agent_id } => match &self.intervention {
                Some(i) if i.agent == agent_id => {
                    self.intervention = None;
                    Ok(vec![ServerMessage::InterveneEnd { agent_id }])
                }
                _ => Err(ProtocolError::new(ErrorCode::BadAgent, format!("agent {agent_id} is not being intervened"))),
            },
        }
    }

    fn start_episode(&mut self) -> Result<Vec<ServerMessage>, ProtocolError> {
        if self.done {
            return Err(ProtocolError::new(ErrorCode::NotReady, "session is complete"));
        }
        if self.episode.is_some() {
            return Err(ProtocolError::new(ErrorCode::NotReady, "an episode is already running"));
        }
        let seed = self.next_seed();
        let state = reset(&self.env, seed).map_err(|e| ProtocolError::new(ErrorCode::NotReady, e.to_string()))?;
        let n = self.env.n_agents;
        let id = self.episodes_done() as u64;
        if self.cfg.mode == Mode::EvalWithInterventions {
            self.interventions_left = self.cfg.intervention_budget;
        }
        self.episode = Some(Episode { id, state, held: vec![AgentAction::ZERO; n], fresh: vec![false; n], records: vec![], total: 0.0, reward: 0.0 });
        Ok(vec![ServerMessage::EpisodeStart { episode: id, demo_agent: self.demo_agent(), seed }, self.state_message()])
    }

    fn abandon(&mut self) -> Option<ServerMessage> {
        let ep = self.episode.take()?;
        self.intervention = None;
        self.discarded.push(ep.id);
        tracing::info!(episode = ep.id, ticks = ep.state.tick, "episode discarded");
        Some(ServerMessage::EpisodeEnd { episode: ep.id, episode_return: ep.total, recorded: false, episodes_done: self.episodes_done() })
    }

    /// Drops the running episode when the client goes away.
    pub fn disconnect(&mut self) {
        self.abandon();
    }

    /// Whether synchronous mode may advance: the human-controlled agents
    /// have sent their actions for this tick.
    pub fn ready_to_step(&self) -> bool {
        let Some(ep) = &self.episode else { return false };
        match self.cfg.mode {
            Mode::R2bcDemo => self.demo_agent().is_some_and(|d| ep.fresh[d]),
            Mode::JbcDemo => ep.fresh.iter().all(|&f| f),
            Mode::EvalWithInterventions => match &self.intervention {
                Some(i) => ep.fresh[i.agent],
                None => true,
            },
        }
    }

    fn state_message(&self) -> ServerMessage {
        let ep = self.episode.as_ref().expect("episode running");
        let done = ep.state.tick >= self.env.horizon || ep.state.events.dropped;
        ServerMessage::State {
            tick: ep.state.tick,
            demo_agent: self.demo_agent(),
            agents: agent_views(&ep.state),
            objects: object_views(&ep.state),
            reward: ep.reward,
            interventions_left: self.interventions_left,
            obs: joint_observe(&ep.state, &self.env).into_iter().map(|o| o.0).collect(),
            done,
        }
    }

    /// Advances the running episode by one step with the held actions.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, SessionError> {
        let Some(mut ep) = self.episode.take() else { return Ok(vec![]) };
        let mut out = Vec::new();
        let obs = joint_observe(&ep.state, &self.env);
        let t = ep.state.tick;
        let source = self.source();
        let action = match &self.inner {
            Inner::RoundRobin(rr) => {
                let demo = rr.demo_agent();
                let mut actions = rr.learner_actions(&obs)?.per_agent;
                actions[demo] = ep.held[demo];
                ep.records.push(rr.record(t, &obs, ep.held[demo], source));
                JointAction::new(actions)
            }
            Inner::Joint { .. } => {
                let joint = JointAction::new(ep.held.clone());
                ep.records.push(TransitionRecord {
                    episode_id: ep.id,
                    agent: AgentSlot::Joint,
                    t,
                    obs: obs.iter().flat_map(|o| o.iter().copied()).collect(),
                    action: joint.flatten(),
                    source,
                    executed: None,
                });
                joint
            }
            Inner::Eval { policies, .. } => {
                let mut joint = policies.act(&obs)?;
                if let Some(i) = &mut self.intervention {
                    joint.per_agent[i.agent] = ep.held[i.agent];
                    i.ticks_left = i.ticks_left.saturating_sub(1);
                }
                joint
            }
        };
        if self.intervention.as_ref().is_some_and(|i| i.ticks_left == 0) {
            let agent = self.intervention.take().expect("checked").agent;
            out.push(ServerMessage::InterveneEnd { agent_id: agent });
        }
        let res = step(&ep.state, &action, &self.env).map_err(AlgoError::from)?;
        ep.state = res.state;
        ep.reward = res.reward;
        ep.total += res.reward;
        ep.fresh.iter_mut().for_each(|f| *f = false);
        self.episode = Some(ep);
        out.push(self.state_message());
        if res.done {
            let ep = self.episode.take().expect("episode running");
            self.intervention = None;
            self.finish_episode(ep)?;
            out.push(ServerMessage::EpisodeEnd {
                episode: self.episodes_done() as u64 - 1,
                episode_return: self.returns().last().copied().unwrap_or(0.0),
                recorded: self.cfg.mode != Mode::EvalWithInterventions,
                episodes_done: self.episodes_done(),
            });
            if self.episodes_done() >= self.cfg.episodes {
                self.finalize()?;
                out.push(ServerMessage::Done { episodes: self.episodes_done() });
            }
        }
        Ok(out)
    }

    fn finish_episode(&mut self, ep: Episode) -> Result<(), SessionError> {
        match &mut self.inner {
            Inner::RoundRobin(rr) => rr.commit_episode(ep.records, ep.total)?,
            Inner::Joint { dataset, returns, .. } => {
                dataset.buffer_mut(AgentSlot::Joint).expect("joint layout").append_episode(ep.records).map_err(AlgoError::from)?;
                returns.push(ep.total);
            }
            Inner::Eval { returns, .. } => returns.push(ep.total),
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<(), SessionError> {
        match &mut self.inner {
            Inner::RoundRobin(rr) => rr.finish()?,
            Inner::Joint { dataset, policies, fits, .. } => {
                let (p, logs) = train_offline::<S>(&self.env, &self.algo, dataset)?;
                *policies = Some(p);
                *fits = logs;
            }
            Inner::Eval { .. } => {}
        }
        self.done = true;
        Ok(())
    }

    /// Writes the dataset, policies and logs gathered so far into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SessionError> {
        let io = |e: std::io::Error| SessionError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        if let Some(ds) = self.dataset() {
            ds.save(&dir.join("dataset.jsonl")).map_err(AlgoError::from)?;
        }
        if self.cfg.mode != Mode::EvalWithInterventions {
            if let Some(p) = self.policies() {
                p.save(&dir.join("policies"))?;
            }
        }
        let log = match &self.inner {
            Inner::RoundRobin(rr) => rr.log().clone(),
            Inner::Joint { fits, .. } => RunLog { episodes: vec![], fits: fits.clone() },
            Inner::Eval { .. } => RunLog::default(),
        };
        std::fs::write(dir.join("episodes.jsonl"), log.episodes_jsonl()).map_err(io)?;
        std::fs::write(dir.join("fits.jsonl"), log.fits_jsonl()).map_err(io)?;
        let returns: String = self.returns().iter().map(|r| format!("{}\n", serde_json::json!(r))).collect();
        std::fs::write(dir.join("returns.jsonl"), returns).map_err(io)?;
        let interventions: String = self.intervention_log.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect();
        std::fs::write(dir.join("interventions.jsonl"), interventions).map_err(io)?;
        let discarded: String = self.discarded.iter().map(|e| format!("{e}\n")).collect();
        std::fs::write(dir.join("discarded.txt"), discarded).map_err(io)
    }
}
