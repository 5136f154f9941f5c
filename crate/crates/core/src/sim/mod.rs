//! Deterministic fixed-timestep multi-agent simulation kernel.
//!
//! Agents are holonomic point masses driven by planar force commands with
//! linear drag, integrated with semi-implicit Euler at a fixed `dt`.
//! All randomness is consumed in [`reset`]; [`step`] is a pure function of
//! `(state, action, config)`.

mod config;
pub(crate) mod physics;
mod state;

pub use config::{EnvConfig, PhysicsParams, TaskId, TaskParams};
pub use state::{AgentAction, AgentBody, AgentObservation, JointAction, ObjectBody, ObjectKind, TaskEvents, WorldState};

use crate::rng::{stream_rng, Stream};
use crate::tasks;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown task `{0}` (expected navigation, balance, buzzwire or transport)")]
    UnknownTask(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("action for agent {agent} has non-finite components")]
    NonFiniteAction { agent: usize },
    #[error("joint action has {got} agents, expected {expected}")]
    ActionArity { expected: usize, got: usize },
    #[error("agent id {agent} out of range for {n_agents} agents")]
    AgentOutOfRange { agent: usize, n_agents: usize },
    #[error("episode already finished at tick {tick}")]
    EpisodeFinished { tick: u32 },
}

/// Result of advancing the world by one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub reward: f64,
    pub done: bool,
}

/// Draws the initial state of an episode. Identical `(config, seed)` pairs
/// give bit-identical states.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<WorldState, SimError> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::EnvReset, 0);
    let (agents, objects) = tasks::initial_bodies(config, &mut rng);
    Ok(WorldState {
        tick: 0,
        agents,
        objects,
        events: TaskEvents::default(),
        seed,
    })
}

/// Advances one tick. Actions are clamped to `[-1, 1]` per component.
pub fn step(state: &WorldState, action: &JointAction, config: &EnvConfig) -> Result<StepOutcome, SimError> {
    if state.tick >= config.horizon || state.events.dropped {
        return Err(SimError::EpisodeFinished { tick: state.tick });
    }
    if action.len() != state.agents.len() {
        return Err(SimError::ActionArity {
            expected: state.agents.len(),
            got: action.len(),
        });
    }
    for (agent, a) in action.iter().enumerate() {
        if !a.is_finite() {
            return Err(SimError::NonFiniteAction { agent });
        }
    }
    let clamped: Vec<AgentAction> = action.iter().map(|a| a.clamped()).collect();

    let mut next = state.clone();
    tasks::advance(config, &mut next, &clamped);
    next.tick += 1;

    let reward = tasks::reward(config, state, &mut next);
    let done = next.tick >= config.horizon || next.events.dropped;
    Ok(StepOutcome {
        state: next,
        reward,
        done,
    })
}

/// Local observation of agent `agent`, laid out per task.
pub fn observe(state: &WorldState, agent: usize, config: &EnvConfig) -> Result<AgentObservation, SimError> {
    if agent >= state.agents.len() {
        return Err(SimError::AgentOutOfRange {
            agent,
            n_agents: state.agents.len(),
        });
    }
    Ok(tasks::observe(config, state, agent))
}

/// Observations of every agent, in index order.
pub fn joint_observe(state: &WorldState, config: &EnvConfig) -> Vec<AgentObservation> {
    (0..state.agents.len())
        .map(|i| tasks::observe(config, state, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn zero_action(n: usize) -> JointAction {
        JointAction::new(vec![AgentAction::ZERO; n])
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        let a = reset(&cfg, 7).unwrap();
        let b = reset(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = reset(&cfg, 8).unwrap();
        assert_ne!(a.agents[0].pos, c.agents[0].pos);
    }

    #[test]
    fn unknown_task_is_config_error() {
        let err = "soccer".parse::<TaskId>().unwrap_err();
        assert!(matches!(err, SimError::UnknownTask(_)));
    }

    #[test]
    fn zero_action_at_rest_keeps_positions() {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        let mut s = reset(&cfg, 3).unwrap();
        for a in &mut s.agents {
            a.vel = Vec2::ZERO;
        }
        let out = step(&s, &zero_action(3), &cfg).unwrap();
        assert_eq!(out.state.tick, 1);
        for (before, after) in s.agents.iter().zip(&out.state.agents) {
            assert_eq!(before.pos, after.pos);
        }
    }

    #[test]
    fn drag_decays_velocity_by_one_euler_step() {
        let mut cfg = EnvConfig::for_task(TaskId::Navigation);
        cfg.physics.drag = 0.5;
        cfg.dt = 0.1;
        let mut s = reset(&cfg, 3).unwrap();
        // keep agents far apart and away from walls
        s.agents[0].pos = Vec2::new(-0.5, 0.0);
        s.agents[1].pos = Vec2::new(0.5, 0.0);
        s.agents[2].pos = Vec2::new(0.0, 0.5);
        s.agents[0].vel = Vec2::new(0.4, -0.2);
        let out = step(&s, &zero_action(3), &cfg).unwrap();
        // v * (1 - 0.5 * 0.1) = v * 0.95
        let v = out.state.agents[0].vel;
        assert!((v.x - 0.38).abs() < 1e-15);
        assert!((v.y + 0.19).abs() < 1e-15);
        let p = out.state.agents[0].pos;
        assert!((p.x - (-0.5 + 0.038)).abs() < 1e-15);
    }

    #[test]
    fn last_tick_is_done() {
        let mut cfg = EnvConfig::for_task(TaskId::Navigation);
        cfg.horizon = 5;
        let mut s = reset(&cfg, 1).unwrap();
        s.tick = 4;
        let out = step(&s, &zero_action(3), &cfg).unwrap();
        assert!(out.done);
        assert!(step(&out.state, &zero_action(3), &cfg).is_err());
    }

    #[test]
    fn non_finite_action_rejected() {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        let s = reset(&cfg, 1).unwrap();
        let mut a = zero_action(3);
        a.per_agent[1] = AgentAction::new(f64::NAN, 0.0);
        assert_eq!(step(&s, &a, &cfg).unwrap_err(), SimError::NonFiniteAction { agent: 1 });
    }

    #[test]
    fn observe_rejects_bad_agent() {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        let s = reset(&cfg, 1).unwrap();
        assert!(matches!(observe(&s, 3, &cfg), Err(SimError::AgentOutOfRange { .. })));
    }

    #[test]
    fn joint_observe_matches_observe() {
        for task in TaskId::ALL {
            let cfg = EnvConfig::for_task(task);
            let s = reset(&cfg, 11).unwrap();
            let all = joint_observe(&s, &cfg);
            assert_eq!(all.len(), cfg.n_agents);
            for (i, o) in all.iter().enumerate() {
                assert_eq!(o, &observe(&s, i, &cfg).unwrap());
                assert_eq!(o.len(), cfg.obs_dim());
            }
            assert_eq!(all, joint_observe(&s, &cfg));
        }
    }
}
