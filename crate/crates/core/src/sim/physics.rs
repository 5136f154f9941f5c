//! Shared integration and soft-contact helpers.

use super::{AgentAction, AgentBody, EnvConfig};
use crate::geom::Vec2;

/// Force produced by an action. The commanded vector saturates at unit
/// length, so diagonal commands are no stronger than axis-aligned ones.
#[inline]
pub fn action_force(a: AgentAction, cfg: &EnvConfig) -> Vec2 {
    a.as_vec2().clamp_norm(1.0) * cfg.physics.force_gain
}

/// Penalty spring from the square arena walls on a disc.
pub fn wall_force(pos: Vec2, radius: f64, cfg: &EnvConfig) -> Vec2 {
    let hw = cfg.arena_halfwidth;
    let k = cfg.physics.wall_stiffness;
    let mut f = Vec2::ZERO;
    if pos.x + radius > hw {
        f.x -= k * (pos.x + radius - hw);
    }
    if pos.x - radius < -hw {
        f.x += k * (-hw - (pos.x - radius));
    }
    if pos.y + radius > hw {
        f.y -= k * (pos.y + radius - hw);
    }
    if pos.y - radius < -hw {
        f.y += k * (-hw - (pos.y - radius));
    }
    f
}

/// Spring-damper contact force on disc 1 from disc 2. Zero when apart;
/// never attractive.
pub fn disc_contact(p1: Vec2, v1: Vec2, r1: f64, p2: Vec2, v2: Vec2, r2: f64, cfg: &EnvConfig) -> Vec2 {
    let d = p1 - p2;
    let dist = d.norm();
    let pen = r1 + r2 - dist;
    if pen <= 0.0 {
        return Vec2::ZERO;
    }
    // coincident centres: push along +x
    let n = if dist > 0.0 { d * (1.0 / dist) } else { Vec2::new(1.0, 0.0) };
    let approach = (v1 - v2).dot(n);
    let mag = cfg.physics.contact_stiffness * pen - cfg.physics.contact_damping * approach;
    n * mag.max(0.0)
}

/// Agent-agent repulsion forces, indexed like `agents`.
pub fn agent_repulsion(agents: &[AgentBody], cfg: &EnvConfig) -> Vec<Vec2> {
    let r = cfg.physics.agent_radius;
    let mut forces = vec![Vec2::ZERO; agents.len()];
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let f = disc_contact(agents[i].pos, agents[i].vel, r, agents[j].pos, agents[j].vel, r, cfg);
            forces[i] += f;
            forces[j] -= f;
        }
    }
    forces
}

/// Semi-implicit Euler update of every agent under action forces plus
/// `external` forces. Speeds are capped at `max_speed`.
pub fn integrate_agents(agents: &mut [AgentBody], actions: &[AgentAction], external: &[Vec2], cfg: &EnvConfig) {
    let p = &cfg.physics;
    let dt = cfg.dt;
    for ((agent, &a), &ext) in agents.iter_mut().zip(actions).zip(external) {
        let force = action_force(a, cfg) + ext + wall_force(agent.pos, p.agent_radius, cfg);
        let vel = (agent.vel * (1.0 - p.drag * dt) + force * (dt / p.agent_mass)).clamp_norm(p.max_speed);
        agent.vel = vel;
        agent.pos += vel * dt;
        if vel.norm_sq() > 0.0 {
            agent.heading = vel.y.atan2(vel.x);
        }
    }
}

/// Number of agent pairs whose discs overlap.
pub fn overlapping_pairs(agents: &[AgentBody], radius: f64) -> usize {
    let mut n = 0;
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            if (agents[i].pos - agents[j].pos).norm() < 2.0 * radius {
                n += 1;
            }
        }
    }
    n
}
