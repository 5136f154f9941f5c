//! Transport: a heavy package with Coulomb friction must be pushed into a
//! goal region. Static friction exceeds the push of any single agent.

use super::{scatter, uniform};
use crate::geom::Vec2;
use crate::rng::Rng;
use crate::sim::physics::{agent_repulsion, disc_contact, integrate_agents, wall_force};
use crate::sim::{AgentAction, AgentBody, AgentObservation, EnvConfig, ObjectBody, ObjectKind, WorldState};

pub const OBS_VEL: usize = 0;
pub const OBS_PACKAGE: usize = 2;
pub const OBS_TO_GOAL: usize = 4;

const PACKAGE: usize = 0;
const GOAL: usize = 1;

pub(crate) fn initial(cfg: &EnvConfig, rng: &mut Rng) -> (Vec<AgentBody>, Vec<ObjectBody>) {
    let package = Vec2::new(uniform(rng, -0.5, -0.1), uniform(rng, -0.4, 0.4));
    let goal = Vec2::new(uniform(rng, 0.4, 0.7), uniform(rng, -0.5, 0.5));
    let clear = cfg.params.package_radius + cfg.physics.agent_radius + 0.05;
    let agents = scatter(rng, cfg.n_agents, cfg.arena_halfwidth * 0.9, 0.15, |p| (p - package).norm() >= clear);
    (
        agents.into_iter().map(AgentBody::at).collect(),
        vec![ObjectBody::new(ObjectKind::Package, package), ObjectBody::new(ObjectKind::Goal, goal)],
    )
}

pub(crate) fn advance(cfg: &EnvConfig, state: &mut WorldState, actions: &[AgentAction]) {
    let p = &cfg.params;
    let dt = cfg.dt;
    let r = cfg.physics.agent_radius;
    let pkg = state.objects[PACKAGE];

    let mut forces = agent_repulsion(&state.agents, cfg);
    let mut push = wall_force(pkg.pos, p.package_radius, cfg);
    for (f, a) in forces.iter_mut().zip(&state.agents) {
        let c = disc_contact(a.pos, a.vel, r, pkg.pos, pkg.vel, p.package_radius, cfg);
        *f += c;
        push -= c;
    }
    integrate_agents(&mut state.agents, actions, &forces, cfg);

    let f_static = p.static_friction * cfg.physics.force_gain;
    let f_kinetic = p.kinetic_friction * cfg.physics.force_gain;
    let speed = pkg.vel.norm();
    let vel = if speed == 0.0 {
        if push.norm() <= f_static {
            Vec2::ZERO
        } else {
            let accel = (push - push.normalized() * f_kinetic) * (1.0 / p.package_mass);
            accel * dt
        }
    } else {
        let accel = (push - pkg.vel * (f_kinetic / speed)) * (1.0 / p.package_mass);
        let v = pkg.vel + accel * dt;
        // friction cannot reverse the motion
        if v.dot(pkg.vel) <= 0.0 && push.norm() <= f_static {
            Vec2::ZERO
        } else {
            v
        }
    };
    state.objects[PACKAGE].vel = vel;
    state.objects[PACKAGE].pos = pkg.pos + vel * dt;
}

fn goal_distance(state: &WorldState) -> f64 {
    (state.objects[PACKAGE].pos - state.objects[GOAL].pos).norm()
}

/// Decrease in package-goal distance, plus a one-off bonus on entering the
/// goal region.
pub fn reward(cfg: &EnvConfig, prev: &WorldState, next: &mut WorldState) -> f64 {
    let d_next = goal_distance(next);
    let mut r = goal_distance(prev) - d_next;
    if !next.events.bonus_awarded && d_next < cfg.params.goal_radius {
        next.events.bonus_awarded = true;
        r += cfg.params.goal_bonus;
    }
    r
}

pub(crate) fn observe(_cfg: &EnvConfig, state: &WorldState, agent: usize) -> AgentObservation {
    let me = &state.agents[agent];
    let rel_pkg = state.objects[PACKAGE].pos - me.pos;
    let to_goal = state.objects[GOAL].pos - state.objects[PACKAGE].pos;
    AgentObservation(vec![me.vel.x, me.vel.y, rel_pkg.x, rel_pkg.y, to_goal.x, to_goal.y])
}
