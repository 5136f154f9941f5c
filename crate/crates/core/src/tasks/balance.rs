//! Balance: agents carry a free rod from below; a ball rolls on the rod
//! under gravity and must be lifted to a goal above.
//!
//! Rod model: a rigid bar (centre, angle) with translational and angular
//! drag. Loads are gravity on rod and package, penalty contacts with
//! agents below/above the bar, and wall springs at the bar ends. The
//! package does not exchange momentum with the rod: its weight is applied
//! at its contact point as a normal load, and its position along the rod
//! follows `s'' = -g_roll sin(θ) - c s'` with `g_roll = 5/7 g` (solid ball).
//!
//! The episode ends early when the package leaves the rod or a rod end
//! touches the floor.

use super::uniform;
use crate::geom::Vec2;
use crate::rng::Rng;
use crate::sim::physics::{agent_repulsion, integrate_agents, wall_force};
use crate::sim::{AgentAction, AgentBody, AgentObservation, EnvConfig, ObjectBody, ObjectKind, WorldState};

/// Half thickness of the rod, m.
pub const LINE_HALF_THICKNESS: f64 = 0.01;
pub const START_HEIGHT: f64 = -0.7;

pub const OBS_VEL: usize = 0;
pub const OBS_LINE: usize = 2;
pub const OBS_ANGLE: usize = 4;
pub const OBS_ANG_VEL: usize = 5;
pub const OBS_PACKAGE: usize = 6;
pub const OBS_GOAL: usize = 8;

/// Signed rest offset along the rod for agent `i` of `n`.
pub fn agent_offset(cfg: &EnvConfig, i: usize) -> f64 {
    let n = cfg.n_agents;
    if n <= 1 {
        return 0.0;
    }
    let span = 0.75 * cfg.params.line_length / 2.0;
    span * (2.0 * i as f64 / (n - 1) as f64 - 1.0)
}

fn package_height(cfg: &EnvConfig) -> f64 {
    cfg.params.line_package_radius + LINE_HALF_THICKNESS
}

pub(crate) fn initial(cfg: &EnvConfig, rng: &mut Rng) -> (Vec<AgentBody>, Vec<ObjectBody>) {
    let r = cfg.physics.agent_radius;
    let centre = Vec2::new(uniform(rng, -0.2, 0.2), START_HEIGHT);
    let s0 = uniform(rng, -0.15, 0.15);
    let goal = Vec2::new(uniform(rng, -0.3, 0.3), cfg.params.balance_goal_height);
    let agents = (0..cfg.n_agents)
        .map(|i| {
            let x = centre.x + agent_offset(cfg, i) + uniform(rng, -0.03, 0.03);
            AgentBody::at(Vec2::new(x, centre.y - LINE_HALF_THICKNESS - r))
        })
        .collect();
    let line = ObjectBody::new(ObjectKind::Line, centre);
    let package = ObjectBody::new(ObjectKind::Package, centre + Vec2::new(s0, package_height(cfg)));
    (agents, vec![line, package, ObjectBody::new(ObjectKind::Goal, goal)])
}

/// Rolling coordinate and speed of the package along the rod.
fn rolling_state(cfg: &EnvConfig, line: &ObjectBody, package: &ObjectBody) -> (f64, f64) {
    let t = Vec2::from_angle(line.angle);
    let s = (package.pos - line.pos).dot(t);
    let s_dot = (package.vel - line.vel).dot(t) + line.ang_vel * package_height(cfg);
    (s, s_dot)
}

fn place_package(cfg: &EnvConfig, line: &ObjectBody, s: f64, s_dot: f64) -> (Vec2, Vec2) {
    let t = Vec2::from_angle(line.angle);
    let n = t.perp();
    let q = package_height(cfg);
    let arm = t * s + n * q;
    let pos = line.pos + arm;
    let vel = line.vel + arm.perp() * line.ang_vel + t * s_dot;
    (pos, vel)
}

const LINE: usize = 0;
const PACKAGE: usize = 1;
const GOAL: usize = 2;

pub(crate) fn advance(cfg: &EnvConfig, state: &mut WorldState, actions: &[AgentAction]) {
    let p = &cfg.params;
    let dt = cfg.dt;
    let r = cfg.physics.agent_radius;
    let line = state.objects[LINE];
    let package = state.objects[PACKAGE];
    let (s, s_dot) = rolling_state(cfg, &line, &package);

    let t = Vec2::from_angle(line.angle);
    let n = t.perp();
    let half = p.line_length / 2.0;

    let total_mass = p.line_mass + p.line_package_mass;
    let mut line_force = Vec2::new(0.0, -total_mass * p.gravity);
    let mut line_torque = -s * p.line_package_mass * p.gravity * line.angle.cos();

    let mut agent_forces = agent_repulsion(&state.agents, cfg);
    for (agent, f_agent) in state.agents.iter().zip(agent_forces.iter_mut()) {
        let rel = agent.pos - line.pos;
        let u = rel.dot(t);
        let w = rel.dot(n);
        if u.abs() > half {
            continue;
        }
        let pen = LINE_HALF_THICKNESS + r - w.abs();
        if pen <= 0.0 {
            continue;
        }
        let normal = if w >= 0.0 { n } else { -n };
        let point_vel = line.vel + (t * u).perp() * line.ang_vel;
        let approach = (agent.vel - point_vel).dot(normal);
        let mag = (cfg.physics.contact_stiffness * pen - cfg.physics.contact_damping * approach).max(0.0);
        let f = normal * mag;
        *f_agent += f;
        line_force -= f;
        line_torque += (t * u).cross(-f);
    }
    for end in [-half, half] {
        let arm = t * end;
        let f = wall_force(line.pos + arm, LINE_HALF_THICKNESS, cfg);
        line_force += f;
        line_torque += arm.cross(f);
    }
    integrate_agents(&mut state.agents, actions, &agent_forces, cfg);

    let inertia = p.line_mass * p.line_length * p.line_length / 12.0 + p.line_package_mass * s * s;
    let line_vel = line.vel * (1.0 - p.line_drag * dt) + line_force * (dt / total_mass);
    let ang_vel = line.ang_vel * (1.0 - p.line_angular_drag * dt) + line_torque * (dt / inertia);
    let new_line = ObjectBody {
        kind: ObjectKind::Line,
        pos: line.pos + line_vel * dt,
        vel: line_vel,
        angle: line.angle + ang_vel * dt,
        ang_vel,
    };

    let g_roll = p.gravity * 5.0 / 7.0;
    let s_dot = s_dot * (1.0 - p.roll_damping * dt) - g_roll * new_line.angle.sin() * dt;
    let s = s + s_dot * dt;
    let (pkg_pos, pkg_vel) = place_package(cfg, &new_line, s, s_dot);

    state.objects[LINE] = new_line;
    state.objects[PACKAGE].pos = pkg_pos;
    state.objects[PACKAGE].vel = pkg_vel;

    let floor = -cfg.arena_halfwidth;
    let end_low = new_line.pos.y - (new_line.angle.sin() * half).abs();
    if s.abs() > half || end_low < floor {
        state.events.dropped = true;
    }
}

/// `-dist(package, goal)`. When the package drops this tick the drop
/// penalty is added and the remaining ticks of the horizon are charged at
/// the drop-time distance, so ending an episode early never pays.
pub fn reward(cfg: &EnvConfig, state: &WorldState) -> f64 {
    let dist = (state.objects[PACKAGE].pos - state.objects[GOAL].pos).norm();
    if state.events.dropped {
        let remaining = cfg.horizon.saturating_sub(state.tick) as f64;
        -dist - cfg.params.drop_penalty - dist * remaining
    } else {
        -dist
    }
}

pub(crate) fn observe(_cfg: &EnvConfig, state: &WorldState, agent: usize) -> AgentObservation {
    let me = &state.agents[agent];
    let line = &state.objects[LINE];
    let rel_line = line.pos - me.pos;
    let rel_pkg = state.objects[PACKAGE].pos - me.pos;
    let rel_goal = state.objects[GOAL].pos - me.pos;
    AgentObservation(vec![
        me.vel.x,
        me.vel.y,
        rel_line.x,
        rel_line.y,
        line.angle,
        line.ang_vel,
        rel_pkg.x,
        rel_pkg.y,
        rel_goal.x,
        rel_goal.y,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, step, JointAction, TaskId};

    #[test]
    fn package_at_goal_scores_zero() {
        let cfg = EnvConfig::for_task(TaskId::Balance);
        let mut s = reset(&cfg, 0).unwrap();
        s.objects[GOAL].pos = s.objects[PACKAGE].pos;
        assert_eq!(reward(&cfg, &s), 0.0);
        s.objects[GOAL].pos = s.objects[PACKAGE].pos + Vec2::new(0.0, 0.5);
        assert_eq!(reward(&cfg, &s), -0.5);
    }

    #[test]
    fn drop_adds_penalty_and_ends_episode() {
        let cfg = EnvConfig::for_task(TaskId::Balance);
        let mut s = reset(&cfg, 0).unwrap();
        // place the package past the rod end
        let line = s.objects[LINE];
        let (pos, vel) = place_package(&cfg, &line, cfg.params.line_length, 0.0);
        s.objects[PACKAGE].pos = pos;
        s.objects[PACKAGE].vel = vel;
        let out = step(&s, &JointAction::new(vec![AgentAction::ZERO; 3]), &cfg).unwrap();
        assert!(out.done);
        assert!(out.state.events.dropped);
        let dist = (out.state.objects[PACKAGE].pos - out.state.objects[GOAL].pos).norm();
        let remaining = (cfg.horizon - 1) as f64;
        let expected = -dist - cfg.params.drop_penalty - dist * remaining;
        assert!((out.reward - expected).abs() < 1e-9);
    }

    #[test]
    fn rolling_state_round_trips() {
        let cfg = EnvConfig::for_task(TaskId::Balance);
        let line = ObjectBody {
            kind: ObjectKind::Line,
            pos: Vec2::new(0.1, -0.3),
            vel: Vec2::new(0.2, 0.1),
            angle: 0.2,
            ang_vel: -0.4,
        };
        let (pos, vel) = place_package(&cfg, &line, 0.13, -0.07);
        let pkg = ObjectBody { pos, vel, ..ObjectBody::new(ObjectKind::Package, pos) };
        let (s, s_dot) = rolling_state(&cfg, &line, &pkg);
        assert!((s - 0.13).abs() < 1e-12);
        assert!((s_dot + 0.07).abs() < 1e-12);
    }

    #[test]
    fn tilted_rod_rolls_package_downhill() {
        let cfg = EnvConfig::for_task(TaskId::Balance);
        let mut s = reset(&cfg, 0).unwrap();
        s.objects[LINE].angle = 0.2;
        let (pos, vel) = place_package(&cfg, &s.objects[LINE], 0.0, 0.0);
        s.objects[PACKAGE].pos = pos;
        s.objects[PACKAGE].vel = vel;
        let out = step(&s, &JointAction::new(vec![AgentAction::ZERO; 3]), &cfg).unwrap();
        let (s1, _) = rolling_state(&cfg, &out.state.objects[LINE], &out.state.objects[PACKAGE]);
        assert!(s1 < 0.0);
    }
}
