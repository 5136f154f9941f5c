//! Navigation: each agent drives to its own goal while avoiding the others,
//! sensed through a ring of lidar rays.

use super::scatter;
use crate::geom::Vec2;
use crate::rng::Rng;
use crate::sim::physics::{agent_repulsion, integrate_agents, overlapping_pairs};
use crate::sim::{AgentAction, AgentBody, AgentObservation, EnvConfig, ObjectBody, ObjectKind, WorldState};

pub const LIDAR_RAYS: usize = 12;

/// Observation offsets.
pub const OBS_VEL: usize = 0;
pub const OBS_GOAL: usize = 2;
pub const OBS_RAYS: usize = 4;

pub(crate) fn initial(cfg: &EnvConfig, rng: &mut Rng) -> (Vec<AgentBody>, Vec<ObjectBody>) {
    let half = cfg.arena_halfwidth * 0.9;
    let agents = scatter(rng, cfg.n_agents, half, 0.2, |_| true);
    let goals = scatter(rng, cfg.n_agents, half, 0.2, |_| true);
    (
        agents.into_iter().map(AgentBody::at).collect(),
        goals.into_iter().map(|g| ObjectBody::new(ObjectKind::Goal, g)).collect(),
    )
}

pub(crate) fn advance(cfg: &EnvConfig, state: &mut WorldState, actions: &[AgentAction]) {
    let forces = agent_repulsion(&state.agents, cfg);
    integrate_agents(&mut state.agents, actions, &forces, cfg);
}

fn goal_of(state: &WorldState, agent: usize) -> Vec2 {
    state.objects_of(ObjectKind::Goal).nth(agent).map(|g| g.pos).unwrap_or(Vec2::ZERO)
}

/// `-Σ dist(agent_i, goal_i) - collision_penalty · overlapping pairs`.
pub fn reward(cfg: &EnvConfig, state: &WorldState) -> f64 {
    let dist: f64 = state
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| (a.pos - goal_of(state, i)).norm())
        .sum();
    let overlaps = overlapping_pairs(&state.agents, cfg.physics.agent_radius);
    -dist - cfg.params.collision_penalty * overlaps as f64
}

/// Unit direction of lidar ray `k`, fixed in the world frame.
pub fn ray_direction(k: usize) -> Vec2 {
    Vec2::from_angle(std::f64::consts::TAU * k as f64 / LIDAR_RAYS as f64)
}

/// Distance along the ray from `origin` to the first hit on the disc, if any.
fn ray_disc(origin: Vec2, dir: Vec2, centre: Vec2, radius: f64) -> Option<f64> {
    let f = origin - centre;
    let c = f.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = f.dot(dir);
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

pub(crate) fn observe(cfg: &EnvConfig, state: &WorldState, agent: usize) -> AgentObservation {
    let me = &state.agents[agent];
    let goal = goal_of(state, agent) - me.pos;
    let range = cfg.params.lidar_range;
    let mut values = Vec::with_capacity(OBS_RAYS + LIDAR_RAYS);
    values.extend_from_slice(&[me.vel.x, me.vel.y, goal.x, goal.y]);
    for k in 0..LIDAR_RAYS {
        let dir = ray_direction(k);
        let hit = state
            .agents
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .filter_map(|(_, other)| ray_disc(me.pos, dir, other.pos, cfg.physics.agent_radius))
            .fold(range, f64::min);
        values.push(hit.min(range) / range);
    }
    AgentObservation(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{observe, reset, TaskId};

    fn state_with(agents: &[(f64, f64)], goals: &[(f64, f64)]) -> (EnvConfig, WorldState) {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        let mut s = reset(&cfg, 0).unwrap();
        s.agents = agents.iter().map(|&(x, y)| AgentBody::at(Vec2::new(x, y))).collect();
        s.objects = goals
            .iter()
            .map(|&(x, y)| ObjectBody::new(ObjectKind::Goal, Vec2::new(x, y)))
            .collect();
        (cfg, s)
    }

    #[test]
    fn reset_places_three_agents_and_goals_inside_arena() {
        let cfg = EnvConfig::for_task(TaskId::Navigation);
        for seed in 0..20 {
            let s = reset(&cfg, seed).unwrap();
            assert_eq!(s.agents.len(), 3);
            assert_eq!(s.objects_of(ObjectKind::Goal).count(), 3);
            for p in s.agents.iter().map(|a| a.pos).chain(s.objects.iter().map(|o| o.pos)) {
                assert!(p.x.abs() <= 1.0 && p.y.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn agent_at_goal_sees_zero_offset() {
        let (cfg, s) = state_with(&[(0.2, 0.3), (-0.5, 0.5), (0.5, -0.5)], &[(0.2, 0.3), (0.0, 0.0), (0.1, 0.1)]);
        let o = observe(&s, 0, &cfg).unwrap();
        assert_eq!(&o[OBS_GOAL..OBS_GOAL + 2], &[0.0, 0.0]);
    }

    #[test]
    fn rays_read_max_range_without_neighbours() {
        let (cfg, s) = state_with(&[(-0.8, -0.8), (0.8, 0.8), (0.8, -0.8)], &[(0.0, 0.0); 3]);
        let o = observe(&s, 0, &cfg).unwrap();
        assert!(o[OBS_RAYS..].iter().all(|&r| r == 1.0));
    }

    #[test]
    fn ray_hits_neighbour_at_expected_distance() {
        // neighbour 0.25 m along +x: surface at 0.20 m, normalized by 0.35 m range
        let (cfg, s) = state_with(&[(0.0, 0.0), (0.25, 0.0), (0.8, -0.8)], &[(0.0, 0.0); 3]);
        let o = observe(&s, 0, &cfg).unwrap();
        assert!((o[OBS_RAYS] - 0.2 / 0.35).abs() < 1e-12);
        assert!(o[OBS_RAYS..].iter().all(|&r| (0.0..=1.0).contains(&r)));
        // the ray pointing away sees nothing
        assert_eq!(o[OBS_RAYS + LIDAR_RAYS / 2], 1.0);
    }

    #[test]
    fn reward_zero_at_goals_and_linear_in_distance() {
        let (cfg, s) = state_with(&[(0.0, 0.0), (0.5, 0.5), (-0.5, 0.5)], &[(0.0, 0.0), (0.5, 0.5), (-0.5, 0.5)]);
        assert_eq!(reward(&cfg, &s), 0.0);
        let (cfg, s) = state_with(&[(0.0, 0.0), (0.5, 0.5), (-0.5, 0.5)], &[(1.0, 0.0), (0.5, 0.5), (-0.5, 0.5)]);
        assert_eq!(reward(&cfg, &s), -1.0);
    }

    #[test]
    fn overlap_costs_exactly_collision_penalty() {
        // same distance sum, only the pair spacing changes
        let goals = [(0.0, 0.0), (0.0, 0.0), (0.9, 0.9)];
        let (cfg, apart) = state_with(&[(-0.06, 0.0), (0.06, 0.0), (0.9, 0.9)], &goals);
        let (_, close) = state_with(&[(0.02, 0.0), (0.1, 0.0), (0.9, 0.9)], &goals);
        let d_apart: f64 = 0.06 + 0.06;
        let d_close: f64 = 0.02 + 0.1;
        assert!((d_apart - d_close).abs() < 1e-15);
        assert!((reward(&cfg, &apart) - reward(&cfg, &close) - cfg.params.collision_penalty).abs() < 1e-12);
    }
}
