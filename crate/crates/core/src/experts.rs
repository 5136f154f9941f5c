//! Scripted demonstrators.
//!
//! Each controller reads only the acting agent's local observation (plus
//! its own index and static task geometry). The joint demonstrator adds a
//! shared phase for the tasks that need synchronized effort: in balance
//! and transport nobody lifts or pushes until every agent reports being in
//! position.

use crate::geom::Vec2;
use crate::rng::Rng;
use crate::sim::{AgentAction, AgentObservation, EnvConfig, JointAction, TaskId};
use crate::tasks::{balance, buzzwire, navigation, transport};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("observation has length {got}, {task} expects {expected}")]
    ObsMismatch { task: TaskId, expected: usize, got: usize },
    #[error("agent {agent} out of range for {n_agents} agents")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("noise sigma must be finite and >= 0, got {0}")]
    BadSigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertGains {
    pub kp: f64,
    pub kd: f64,
    /// Navigation: repulsion weight and the normalized ray reading below
    /// which it activates.
    pub avoid_weight: f64,
    pub avoid_threshold: f64,
    /// Balance: lift gain on package height error, tilt gain and the tilt limit (rad).
    pub lift_gain: f64,
    pub tilt_gain: f64,
    pub max_tilt: f64,
    /// Balance: PD gains of the rod angle loop.
    pub tilt_kp: f64,
    pub tilt_kd: f64,
    /// Buzz wire: forward drive.
    pub drive: f64,
    /// Transport: push command magnitude.
    pub push: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            kp: 2.0,
            kd: 1.0,
            avoid_weight: 2.0,
            avoid_threshold: 0.3,
            lift_gain: 1.0,
            tilt_gain: 0.5,
            max_tilt: 0.15,
            tilt_kp: 8.0,
            tilt_kd: 0.1,
            drive: 0.6,
            push: 1.0,
        }
    }
}

/// Scripted noisily-optimal demonstrator for one task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPolicy {
    pub env: EnvConfig,
    pub gains: ExpertGains,
    pub noise_sigma: f64,
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

impl ExpertPolicy {
    pub fn new(env: EnvConfig, gains: ExpertGains, noise_sigma: f64) -> Result<Self, ExpertError> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(ExpertError::BadSigma(noise_sigma));
        }
        Ok(Self { env, gains, noise_sigma })
    }

    pub fn with_defaults(env: EnvConfig) -> Self {
        Self {
            env,
            gains: ExpertGains::default(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }

    pub fn task(&self) -> TaskId {
        self.env.task
    }

    fn check(&self, obs: &AgentObservation, agent: usize) -> Result<(), ExpertError> {
        let expected = self.env.obs_dim();
        if obs.len() != expected {
            return Err(ExpertError::ObsMismatch {
                task: self.env.task,
                expected,
                got: obs.len(),
            });
        }
        if agent >= self.env.n_agents {
            return Err(ExpertError::AgentOutOfRange {
                agent,
                n_agents: self.env.n_agents,
            });
        }
        Ok(())
    }

    /// Noisy action for `agent` from its own observation.
    pub fn expert_single(&self, obs: &AgentObservation, agent: usize, rng: &mut Rng) -> Result<AgentAction, ExpertError> {
        let clean = self.clean_single(obs, agent)?;
        Ok(self.add_noise(clean, rng))
    }

    /// Noise-free action for `agent`.
    pub fn clean_single(&self, obs: &AgentObservation, agent: usize) -> Result<AgentAction, ExpertError> {
        self.check(obs, agent)?;
        Ok(self.control(obs, agent, Phase::Individual).clamped())
    }

    /// Coordinated joint action, noisy.
    pub fn expert_joint(&self, observations: &[AgentObservation], rng: &mut Rng) -> Result<JointAction, ExpertError> {
        let clean = self.clean_joint(observations)?;
        Ok(JointAction::new(clean.per_agent.into_iter().map(|a| self.add_noise(a, rng)).collect()))
    }

    /// Coordinated joint action without noise; used as the reference label.
    pub fn clean_joint(&self, observations: &[AgentObservation]) -> Result<JointAction, ExpertError> {
        for (i, o) in observations.iter().enumerate() {
            self.check(o, i)?;
        }
        let phase = match self.env.task {
            TaskId::Balance => {
                let ready = observations.iter().enumerate().all(|(i, o)| self.in_position(o, i));
                Phase::Shared { go: ready }
            }
            TaskId::Transport => {
                // push together once enough agents are in place to beat static friction
                let ready = observations.iter().enumerate().filter(|(i, o)| self.in_position(o, *i)).count();
                let needed = (self.env.params.static_friction.floor() as usize + 1).min(observations.len());
                Phase::Shared { go: ready >= needed }
            }
            _ => Phase::Individual,
        };
        Ok(JointAction::new(
            observations
                .iter()
                .enumerate()
                .map(|(i, o)| self.control(o, i, phase).clamped())
                .collect(),
        ))
    }

    fn add_noise(&self, a: AgentAction, rng: &mut Rng) -> AgentAction {
        if self.noise_sigma == 0.0 {
            return a;
        }
        let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        AgentAction::new(a.0[0] + normal.sample(rng), a.0[1] + normal.sample(rng)).clamped()
    }

    fn in_position(&self, obs: &AgentObservation, agent: usize) -> bool {
        match self.env.task {
            TaskId::Balance => self.balance_geometry(obs, agent).ready,
            TaskId::Transport => self.transport_geometry(obs, agent).ready,
            _ => true,
        }
    }

    fn control(&self, obs: &AgentObservation, agent: usize, phase: Phase) -> AgentAction {
        let a = match self.env.task {
            TaskId::Navigation => self.navigation(obs),
            TaskId::Balance => self.balance(obs, agent, phase),
            TaskId::Buzzwire => self.buzzwire(obs, agent),
            TaskId::Transport => self.transport(obs, agent, phase),
        };
        AgentAction::from_vec(a)
    }

    fn navigation(&self, obs: &AgentObservation) -> Vec2 {
        let g = &self.gains;
        let vel = Vec2::new(obs[navigation::OBS_VEL], obs[navigation::OBS_VEL + 1]);
        let to_goal = Vec2::new(obs[navigation::OBS_GOAL], obs[navigation::OBS_GOAL + 1]);
        let mut a = to_goal * g.kp - vel * g.kd;
        let rays = &obs[navigation::OBS_RAYS..];
        let (k, &nearest) = rays
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("rays present");
        if nearest < g.avoid_threshold {
            let strength = g.avoid_weight * (g.avoid_threshold - nearest) / g.avoid_threshold;
            a -= navigation::ray_direction(k) * strength;
        }
        a
    }

    fn balance_geometry(&self, obs: &AgentObservation, agent: usize) -> BalanceView {
        let r = self.env.physics.agent_radius;
        let angle = obs[balance::OBS_ANGLE];
        let t = Vec2::from_angle(angle);
        let n = t.perp();
        let rel_line = Vec2::new(obs[balance::OBS_LINE], obs[balance::OBS_LINE + 1]);
        let offset = balance::agent_offset(&self.env, agent);
        let to_slot = rel_line + t * offset - n * (balance::LINE_HALF_THICKNESS + r);
        let ready = (to_slot.dot(t)).abs() < 0.1 && to_slot.dot(n).abs() < 0.1;
        BalanceView { t, n, offset, to_slot, ready }
    }

    /// Sum of squared agent offsets along the rod.
    fn balance_moment_arm(&self) -> f64 {
        (0..self.env.n_agents)
            .map(|i| balance::agent_offset(&self.env, i).powi(2))
            .sum::<f64>()
            .max(1e-9)
    }

    fn balance(&self, obs: &AgentObservation, agent: usize, phase: Phase) -> Vec2 {
        let g = &self.gains;
        let p = &self.env.params;
        let view = self.balance_geometry(obs, agent);
        let vel = Vec2::new(obs[balance::OBS_VEL], obs[balance::OBS_VEL + 1]);
        let angle = obs[balance::OBS_ANGLE];
        let ang_vel = obs[balance::OBS_ANG_VEL];
        let rel_pkg = Vec2::new(obs[balance::OBS_PACKAGE], obs[balance::OBS_PACKAGE + 1]);
        let rel_goal = Vec2::new(obs[balance::OBS_GOAL], obs[balance::OBS_GOAL + 1]);

        let lateral = g.kp * view.to_slot.dot(view.t) - g.kd * vel.dot(view.t);

        let hold = (p.line_mass + p.line_package_mass) * p.gravity / (self.env.n_agents as f64 * self.env.physics.force_gain);
        let height_err = rel_goal.y - rel_pkg.y;
        let mut lift = hold + g.lift_gain * height_err.clamp(-0.3, 0.3) - g.kd * 0.5 * vel.dot(view.n);

        // package position along the rod; tilt it back toward the middle and
        // carry the off-centre load with a matching force moment
        let rel_line = Vec2::new(obs[balance::OBS_LINE], obs[balance::OBS_LINE + 1]);
        let along = (rel_pkg - rel_line).dot(view.t);
        let moment_arm = self.balance_moment_arm();
        lift += p.line_package_mass * p.gravity * along * view.offset / (moment_arm * self.env.physics.force_gain);
        let span = (0.75 * p.line_length / 2.0).max(1e-9);
        let target_tilt = (g.tilt_gain * along).clamp(-g.max_tilt, g.max_tilt);
        let tilt = g.tilt_kp * (target_tilt - angle) - g.tilt_kd * ang_vel;
        lift += tilt * view.offset / span;

        // until everyone is in place, just carry the weight
        let lift = match phase {
            Phase::Shared { go: false } => hold - g.kd * 0.5 * vel.dot(view.n),
            _ => lift,
        };
        view.t * lateral + view.n * lift
    }

    fn buzzwire(&self, obs: &AgentObservation, agent: usize) -> Vec2 {
        let g = &self.gains;
        let l = self.env.params.link_length;
        let vel = Vec2::new(obs[buzzwire::OBS_VEL], obs[buzzwire::OBS_VEL + 1]);
        let rel_mass = Vec2::new(obs[buzzwire::OBS_MASS], obs[buzzwire::OBS_MASS + 1]);
        let side = if agent == 0 { -1.0 } else { 1.0 };
        // spot on the corridor axis, one link ahead of / behind the mass
        let slot = rel_mass + Vec2::new(side * l, 0.0);
        let centre_err = obs[buzzwire::OBS_END + 1];
        let mass_to_end = obs[buzzwire::OBS_END] - rel_mass.x;
        let drive = (g.drive * mass_to_end / 0.2).clamp(0.0, g.drive);
        let mut a = Vec2::new(g.kp * slot.x, g.kp * slot.y) - vel * g.kd + Vec2::new(drive, 0.0);
        a.y += g.kp * centre_err;
        a
    }

    fn transport_geometry(&self, obs: &AgentObservation, agent: usize) -> TransportView {
        let r = self.env.physics.agent_radius;
        let big_r = self.env.params.package_radius;
        let rel_pkg = Vec2::new(obs[transport::OBS_PACKAGE], obs[transport::OBS_PACKAGE + 1]);
        let to_goal = Vec2::new(obs[transport::OBS_TO_GOAL], obs[transport::OBS_TO_GOAL + 1]);
        let dir = to_goal.normalized();
        let side = dir.perp();
        let me = -rel_pkg; // own position relative to the package
        let along = me.dot(dir);
        let lat = me.dot(side);
        let n = self.env.n_agents;
        let slot_lat = if n <= 1 {
            0.0
        } else {
            0.06 * (2.0 * agent as f64 / (n - 1) as f64 - 1.0)
        };
        let contact = big_r + r;
        let behind = -(contact * contact - slot_lat * slot_lat).max(0.0).sqrt();
        let slot = dir * (behind - 0.01) + side * slot_lat;
        let is_behind = along < -0.3 * contact;
        let target = if is_behind {
            slot
        } else {
            let s = if lat >= 0.0 { 1.0 } else { -1.0 };
            side * (s * (contact + 0.12)) - dir * (0.8 * contact)
        };
        let gap = me.norm() - contact;
        let ready = is_behind && (lat - slot_lat).abs() < 0.08 && gap < 0.25;
        TransportView {
            dir,
            side,
            to_centre: rel_pkg.normalized(),
            to_target: target - me,
            lat_err: slot_lat - lat,
            ready,
            at_goal: to_goal.norm() < 0.02,
        }
    }

    fn transport(&self, obs: &AgentObservation, agent: usize, phase: Phase) -> Vec2 {
        let g = &self.gains;
        let vel = Vec2::new(obs[transport::OBS_VEL], obs[transport::OBS_VEL + 1]);
        let view = self.transport_geometry(obs, agent);
        if view.at_goal {
            return -vel * g.kd;
        }
        let push_now = match phase {
            Phase::Individual => view.ready,
            Phase::Shared { go } => view.ready && go,
        };
        if push_now {
            (view.dir + view.to_centre).normalized() * g.push + view.side * (g.kp * view.lat_err)
        } else {
            view.to_target * g.kp * 2.0 - vel * g.kd
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Individual,
    Shared { go: bool },
}

struct BalanceView {
    t: Vec2,
    n: Vec2,
    offset: f64,
    to_slot: Vec2,
    ready: bool,
}

struct TransportView {
    dir: Vec2,
    to_centre: Vec2,
    side: Vec2,
    to_target: Vec2,
    lat_err: f64,
    ready: bool,
    at_goal: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::sim::{joint_observe, observe, reset, AgentBody, ObjectBody, ObjectKind};

    fn noiseless(task: TaskId) -> ExpertPolicy {
        ExpertPolicy::new(EnvConfig::for_task(task), ExpertGains::default(), 0.0).unwrap()
    }

    #[test]
    fn navigation_pursues_goal_at_full_gain() {
        let expert = noiseless(TaskId::Navigation);
        let mut obs = vec![0.0; 16];
        obs[2] = 1.0;
        obs[4..].iter_mut().for_each(|r| *r = 1.0);
        let mut rng = stream_rng(0, Stream::ExpertNoise, 0);
        let a = expert.expert_single(&AgentObservation(obs), 0, &mut rng).unwrap();
        assert_eq!(a, AgentAction::new(1.0, 0.0));
    }

    #[test]
    fn navigation_at_goal_brakes_to_zero() {
        let expert = noiseless(TaskId::Navigation);
        let mut obs = vec![0.0; 16];
        obs[4..].iter_mut().for_each(|r| *r = 1.0);
        let a = expert.clean_single(&AgentObservation(obs), 1).unwrap();
        assert_eq!(a, AgentAction::ZERO);
    }

    #[test]
    fn noiseless_expert_is_deterministic() {
        for task in TaskId::ALL {
            let expert = noiseless(task);
            let cfg = &expert.env;
            let s = reset(cfg, 4).unwrap();
            let obs = observe(&s, 0, cfg).unwrap();
            let mut r1 = stream_rng(1, Stream::ExpertNoise, 0);
            let mut r2 = stream_rng(2, Stream::ExpertNoise, 0);
            assert_eq!(
                expert.expert_single(&obs, 0, &mut r1).unwrap(),
                expert.expert_single(&obs, 0, &mut r2).unwrap()
            );
        }
    }

    #[test]
    fn wrong_task_observation_rejected() {
        let expert = noiseless(TaskId::Transport);
        let err = expert.clean_single(&AgentObservation(vec![0.0; 16]), 0).unwrap_err();
        assert!(matches!(err, ExpertError::ObsMismatch { .. }));
    }

    #[test]
    fn navigation_joint_is_per_agent() {
        let expert = noiseless(TaskId::Navigation);
        let s = reset(&expert.env, 9).unwrap();
        let obs = joint_observe(&s, &expert.env);
        let joint = expert.clean_joint(&obs).unwrap();
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(joint[i], expert.clean_single(o, i).unwrap());
        }
    }

    #[test]
    fn transport_agents_behind_package_push_toward_goal() {
        let expert = noiseless(TaskId::Transport);
        let cfg = expert.env.clone();
        let mut s = reset(&cfg, 0).unwrap();
        let pkg = Vec2::new(-0.2, 0.1);
        let goal = Vec2::new(0.6, 0.4);
        s.objects = vec![ObjectBody::new(ObjectKind::Package, pkg), ObjectBody::new(ObjectKind::Goal, goal)];
        let dir = (goal - pkg).normalized();
        let side = dir.perp();
        let contact = cfg.params.package_radius + cfg.physics.agent_radius;
        for (i, lat) in [-0.06, 0.0, 0.06].into_iter().enumerate() {
            let back = (contact * contact - lat * lat).sqrt();
            s.agents[i] = AgentBody::at(pkg - dir * (back - 0.005) + side * lat);
        }
        let obs = joint_observe(&s, &cfg);
        let joint = expert.clean_joint(&obs).unwrap();
        for a in joint.iter() {
            assert!(a.as_vec2().dot(dir) > 0.0, "{a:?}");
        }
    }

    #[test]
    fn noise_is_zero_mean() {
        let expert = ExpertPolicy::new(EnvConfig::for_task(TaskId::Navigation), ExpertGains::default(), 0.05).unwrap();
        let mut obs = vec![0.0; 16];
        obs[4..].iter_mut().for_each(|r| *r = 1.0);
        let obs = AgentObservation(obs);
        let clean = expert.clean_single(&obs, 0).unwrap();
        let mut rng = stream_rng(3, Stream::ExpertNoise, 0);
        let n = 100_000;
        let mut sum = [0.0f64; 2];
        for _ in 0..n {
            let a = expert.expert_single(&obs, 0, &mut rng).unwrap();
            sum[0] += a.0[0] - clean.0[0];
            sum[1] += a.0[1] - clean.0[1];
        }
        let bound = 3.0 * 0.05 / (n as f64).sqrt();
        for s in sum {
            assert!((s / n as f64).abs() < bound);
        }
    }
}
