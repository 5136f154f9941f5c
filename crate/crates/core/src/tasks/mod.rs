//! The four cooperative tasks: initial-state distributions, object
//! dynamics, observation layouts and shared rewards.
//!
//! | task       | N | obs layout                                                                 |
//! |------------|---|----------------------------------------------------------------------------|
//! | navigation | 3 | own vel (2), own goal − pos (2), 12 lidar rays to other agents ∈ [0, 1]    |
//! | balance    | 3 | own vel (2), line centre − pos (2), line angle, angular vel, package − pos (2), goal − pos (2) |
//! | buzzwire   | 2 | own vel (2), mass − pos (2), corridor end − pos (2), wall clearances (2)   |
//! | transport  | 3 | own vel (2), package − pos (2), goal − package (2)                         |

pub mod balance;
pub mod buzzwire;
pub mod navigation;
pub mod transport;

use crate::rng::Rng;
use crate::sim::{AgentAction, AgentBody, AgentObservation, EnvConfig, ObjectBody, TaskId, TaskParams, WorldState};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Static description of a task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskId,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub reward_fn: String,
    pub params: TaskParams,
}

impl TaskSpec {
    pub fn from_config(cfg: &EnvConfig) -> Self {
        let reward_fn = match cfg.task {
            TaskId::Navigation => "neg_goal_distance_minus_collisions",
            TaskId::Balance => "neg_package_goal_distance_drop_penalty",
            TaskId::Buzzwire => "mass_progress_minus_touch",
            TaskId::Transport => "package_goal_progress_plus_bonus",
        };
        Self {
            task: cfg.task,
            n_agents: cfg.n_agents,
            obs_dim: cfg.obs_dim(),
            act_dim: 2,
            reward_fn: reward_fn.to_string(),
            params: cfg.params.clone(),
        }
    }
}

pub(crate) fn initial_bodies(cfg: &EnvConfig, rng: &mut Rng) -> (Vec<AgentBody>, Vec<ObjectBody>) {
    match cfg.task {
        TaskId::Navigation => navigation::initial(cfg, rng),
        TaskId::Balance => balance::initial(cfg, rng),
        TaskId::Buzzwire => buzzwire::initial(cfg, rng),
        TaskId::Transport => transport::initial(cfg, rng),
    }
}

pub(crate) fn advance(cfg: &EnvConfig, state: &mut WorldState, actions: &[AgentAction]) {
    match cfg.task {
        TaskId::Navigation => navigation::advance(cfg, state, actions),
        TaskId::Balance => balance::advance(cfg, state, actions),
        TaskId::Buzzwire => buzzwire::advance(cfg, state, actions),
        TaskId::Transport => transport::advance(cfg, state, actions),
    }
}

/// Shared reward for the transition `prev -> next`. May set sticky flags
/// on `next` (e.g. the transport bonus).
pub(crate) fn reward(cfg: &EnvConfig, prev: &WorldState, next: &mut WorldState) -> f64 {
    match cfg.task {
        TaskId::Navigation => navigation::reward(cfg, next),
        TaskId::Balance => balance::reward(cfg, next),
        TaskId::Buzzwire => buzzwire::reward(cfg, prev, next),
        TaskId::Transport => transport::reward(cfg, prev, next),
    }
}

pub(crate) fn observe(cfg: &EnvConfig, state: &WorldState, agent: usize) -> AgentObservation {
    match cfg.task {
        TaskId::Navigation => navigation::observe(cfg, state, agent),
        TaskId::Balance => balance::observe(cfg, state, agent),
        TaskId::Buzzwire => buzzwire::observe(cfg, state, agent),
        TaskId::Transport => transport::observe(cfg, state, agent),
    }
}

/// Uniform sample in `[lo, hi)`.
#[inline]
pub(crate) fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Rejection-samples `n` points in a square with pairwise spacing `min_gap`
/// and a caller-supplied extra constraint. Falls back to the last draw after
/// a bounded number of attempts.
pub(crate) fn scatter(
    rng: &mut Rng,
    n: usize,
    half: f64,
    min_gap: f64,
    mut accept: impl FnMut(crate::geom::Vec2) -> bool,
) -> Vec<crate::geom::Vec2> {
    let mut pts: Vec<crate::geom::Vec2> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = crate::geom::Vec2::ZERO;
        for _attempt in 0..1000 {
            p = crate::geom::Vec2::new(uniform(rng, -half, half), uniform(rng, -half, half));
            if accept(p) && pts.iter().all(|q| (p - *q).norm() >= min_gap) {
                break;
            }
        }
        pts.push(p);
    }
    pts
}
