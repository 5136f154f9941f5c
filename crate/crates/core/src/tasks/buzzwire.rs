//! Buzz wire: two agents joined to a mass by rigid links must move it
//! along a narrow corridor without touching the walls.
//!
//! Bodies are integrated freely, then the two link-length constraints are
//! enforced by mass-weighted position projection and velocities are
//! re-derived from the corrected displacement, so a push on one agent
//! moves the mass and, through it, the other agent.

use super::uniform;
use crate::geom::Vec2;
use crate::rng::Rng;
use crate::sim::physics::{agent_repulsion, integrate_agents, wall_force};
use crate::sim::{AgentAction, AgentBody, AgentObservation, EnvConfig, ObjectBody, ObjectKind, WorldState};

pub const START_X: f64 = -0.6;
const PROJECTION_ITERS: usize = 4;

pub const OBS_VEL: usize = 0;
pub const OBS_MASS: usize = 2;
pub const OBS_END: usize = 4;
pub const OBS_CLEARANCE: usize = 6;

const MASS: usize = 0;

pub(crate) fn initial(cfg: &EnvConfig, rng: &mut Rng) -> (Vec<AgentBody>, Vec<ObjectBody>) {
    let l = cfg.params.link_length;
    let mass = Vec2::new(START_X + uniform(rng, -0.1, 0.1), uniform(rng, -0.03, 0.03));
    let back = uniform(rng, -0.3, 0.3);
    let front = uniform(rng, -0.3, 0.3);
    let agents = vec![
        AgentBody::at(mass + Vec2::new(-back.cos(), back.sin()) * l),
        AgentBody::at(mass + Vec2::from_angle(front) * l),
    ];
    let objects = vec![
        ObjectBody::new(ObjectKind::Mass, mass),
        ObjectBody::new(ObjectKind::Goal, Vec2::new(cfg.params.corridor_end_x, 0.0)),
    ];
    (agents, objects)
}

/// Spring force from the corridor walls at `y = ±corridor_half_width`.
fn corridor_force(pos: Vec2, radius: f64, cfg: &EnvConfig) -> Vec2 {
    let hw = cfg.params.corridor_half_width;
    let k = cfg.physics.wall_stiffness;
    let mut f = Vec2::ZERO;
    if pos.y + radius > hw {
        f.y -= k * (pos.y + radius - hw);
    }
    if pos.y - radius < -hw {
        f.y += k * (-hw - (pos.y - radius));
    }
    f
}

fn touches_wall(pos: Vec2, radius: f64, cfg: &EnvConfig) -> bool {
    pos.y.abs() + radius >= cfg.params.corridor_half_width
}

pub(crate) fn advance(cfg: &EnvConfig, state: &mut WorldState, actions: &[AgentAction]) {
    let p = &cfg.params;
    let dt = cfg.dt;
    let r = cfg.physics.agent_radius;
    let old_agents: Vec<Vec2> = state.agents.iter().map(|a| a.pos).collect();
    let mass = state.objects[MASS];

    let mut forces = agent_repulsion(&state.agents, cfg);
    for (f, a) in forces.iter_mut().zip(&state.agents) {
        *f += corridor_force(a.pos, r, cfg);
    }
    integrate_agents(&mut state.agents, actions, &forces, cfg);

    let mass_force = corridor_force(mass.pos, p.wire_mass_radius, cfg) + wall_force(mass.pos, p.wire_mass_radius, cfg);
    let mass_vel = mass.vel * (1.0 - cfg.physics.drag * dt) + mass_force * (dt / p.wire_mass);
    let mut mass_pos = mass.pos + mass_vel * dt;

    let w_agent = 1.0 / cfg.physics.agent_mass;
    let w_mass = 1.0 / p.wire_mass;
    for _ in 0..PROJECTION_ITERS {
        for agent in state.agents.iter_mut() {
            let d = agent.pos - mass_pos;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let err = len - p.link_length;
            let dir = d * (1.0 / len);
            let total = w_agent + w_mass;
            agent.pos -= dir * (err * w_agent / total);
            mass_pos += dir * (err * w_mass / total);
        }
    }

    for (agent, old) in state.agents.iter_mut().zip(old_agents) {
        agent.vel = ((agent.pos - old) * (1.0 / dt)).clamp_norm(cfg.physics.max_speed);
    }
    state.objects[MASS].vel = (mass_pos - mass.pos) * (1.0 / dt);
    state.objects[MASS].pos = mass_pos;
}

/// Progress of the mass along the corridor minus the touch penalty.
pub fn reward(cfg: &EnvConfig, prev: &WorldState, next: &WorldState) -> f64 {
    let progress = next.objects[MASS].pos.x - prev.objects[MASS].pos.x;
    progress - if in_contact(cfg, next) { cfg.params.touch_penalty } else { 0.0 }
}

/// Whether the mass or either agent touches a corridor wall.
pub fn in_contact(cfg: &EnvConfig, state: &WorldState) -> bool {
    touches_wall(state.objects[MASS].pos, cfg.params.wire_mass_radius, cfg)
        || state.agents.iter().any(|a| touches_wall(a.pos, cfg.physics.agent_radius, cfg))
}

pub(crate) fn observe(cfg: &EnvConfig, state: &WorldState, agent: usize) -> AgentObservation {
    let me = &state.agents[agent];
    let r = cfg.physics.agent_radius;
    let hw = cfg.params.corridor_half_width;
    let rel_mass = state.objects[MASS].pos - me.pos;
    AgentObservation(vec![
        me.vel.x,
        me.vel.y,
        rel_mass.x,
        rel_mass.y,
        cfg.params.corridor_end_x - me.pos.x,
        -me.pos.y,
        hw - me.pos.y - r,
        me.pos.y + hw - r,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, step, JointAction, TaskId};

    #[test]
    fn reset_attaches_agents_inside_corridor() {
        let cfg = EnvConfig::for_task(TaskId::Buzzwire);
        for seed in 0..20 {
            let s = reset(&cfg, seed).unwrap();
            assert_eq!(s.agents.len(), 2);
            let m = s.objects[MASS].pos;
            assert!(m.y.abs() + cfg.params.wire_mass_radius < cfg.params.corridor_half_width);
            for a in &s.agents {
                assert!(((a.pos - m).norm() - cfg.params.link_length).abs() < 1e-12);
            }
        }
    }

    fn straight(cfg: &EnvConfig) -> WorldState {
        let mut s = reset(cfg, 0).unwrap();
        let m = Vec2::new(0.0, 0.0);
        s.objects[MASS].pos = m;
        s.agents[0] = AgentBody::at(m - Vec2::new(cfg.params.link_length, 0.0));
        s.agents[1] = AgentBody::at(m + Vec2::new(cfg.params.link_length, 0.0));
        s
    }

    #[test]
    fn push_on_one_agent_displaces_the_other() {
        let cfg = EnvConfig::for_task(TaskId::Buzzwire);
        let s = straight(&cfg);
        let idle = step(&s, &JointAction::new(vec![AgentAction::ZERO; 2]), &cfg).unwrap();
        let pushed = step(&s, &JointAction::new(vec![AgentAction::new(1.0, 0.0), AgentAction::ZERO]), &cfg).unwrap();
        let dx = pushed.state.agents[1].pos.x - idle.state.agents[1].pos.x;
        assert!(dx > 1e-3, "agent 2 moved {dx}");
    }

    #[test]
    fn reward_is_progress_minus_touch() {
        let cfg = EnvConfig::for_task(TaskId::Buzzwire);
        let prev = straight(&cfg);
        let mut next = prev.clone();
        next.objects[MASS].pos.x += 0.1;
        assert!((reward(&cfg, &prev, &next) - 0.1).abs() < 1e-15);
        let mut back = prev.clone();
        back.objects[MASS].pos.x -= 0.1;
        assert!((reward(&cfg, &prev, &back) + 0.1).abs() < 1e-15);
        let mut touching = prev.clone();
        touching.agents[0].pos.y = cfg.params.corridor_half_width;
        assert_eq!(reward(&cfg, &prev, &touching), -cfg.params.touch_penalty);
    }
}
