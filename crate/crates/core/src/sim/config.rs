use super::SimError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The four cooperative tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Navigation,
    Balance,
    Buzzwire,
    Transport,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Navigation, TaskId::Balance, TaskId::Buzzwire, TaskId::Transport];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Navigation => "navigation",
            TaskId::Balance => "balance",
            TaskId::Buzzwire => "buzzwire",
            TaskId::Transport => "transport",
        }
    }

    pub fn default_agents(self) -> usize {
        match self {
            TaskId::Navigation | TaskId::Balance | TaskId::Transport => 3,
            TaskId::Buzzwire => 2,
        }
    }

    /// Length of a single agent's observation vector.
    pub fn obs_dim(self) -> usize {
        match self {
            TaskId::Navigation => 4 + super::super::tasks::navigation::LIDAR_RAYS,
            TaskId::Balance => 10,
            TaskId::Buzzwire => 8,
            TaskId::Transport => 6,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "navigation" => Ok(TaskId::Navigation),
            "balance" => Ok(TaskId::Balance),
            "buzzwire" | "buzz_wire" => Ok(TaskId::Buzzwire),
            "transport" => Ok(TaskId::Transport),
            other => Err(SimError::UnknownTask(other.to_string())),
        }
    }
}

/// Point-mass agent dynamics shared by every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// kg
    pub agent_mass: f64,
    /// m
    pub agent_radius: f64,
    /// m/s
    pub max_speed: f64,
    /// Linear drag rate, 1/s. Velocity decays by `1 - drag * dt` per tick.
    pub drag: f64,
    /// Force (N) produced by a unit-length action.
    pub force_gain: f64,
    /// Penalty-spring stiffness for body contacts, N/m.
    pub contact_stiffness: f64,
    /// Contact damping on approach speed, N·s/m.
    pub contact_damping: f64,
    /// Arena wall spring stiffness, N/m.
    pub wall_stiffness: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            agent_mass: 1.0,
            agent_radius: 0.05,
            max_speed: 1.0,
            drag: 1.0,
            force_gain: 2.0,
            contact_stiffness: 40.0,
            contact_damping: 4.0,
            wall_stiffness: 40.0,
        }
    }
}

/// Task geometry, object masses and reward constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskParams {
    /// m
    pub goal_radius: f64,
    /// Per-pair collision penalty (navigation).
    pub collision_penalty: f64,
    /// Wall-touch penalty (buzz wire).
    pub touch_penalty: f64,
    /// Package-drop penalty (balance).
    pub drop_penalty: f64,
    /// Goal-entry bonus (transport).
    pub goal_bonus: f64,
    /// Lidar range, m.
    pub lidar_range: f64,

    /// Balance: rod length (m), rod mass (kg), package mass (kg) and radius (m).
    pub line_length: f64,
    pub line_mass: f64,
    pub line_package_mass: f64,
    pub line_package_radius: f64,
    /// Balance gravity, m/s².
    pub gravity: f64,
    /// Rolling damping of the package along the rod, 1/s.
    pub roll_damping: f64,
    pub line_drag: f64,
    pub line_angular_drag: f64,
    /// Height of the balance goal, m.
    pub balance_goal_height: f64,

    /// Buzz wire: corridor half width (m), x of the corridor end (m), link length (m).
    pub corridor_half_width: f64,
    pub corridor_end_x: f64,
    pub link_length: f64,
    pub wire_mass: f64,
    pub wire_mass_radius: f64,

    /// Transport package mass (kg) and radius (m).
    pub package_mass: f64,
    pub package_radius: f64,
    /// Static and kinetic friction of the package, in multiples of `force_gain`.
    pub static_friction: f64,
    pub kinetic_friction: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            goal_radius: 0.1,
            collision_penalty: 1.0,
            touch_penalty: 0.5,
            drop_penalty: 10.0,
            goal_bonus: 5.0,
            lidar_range: 0.35,

            line_length: 0.8,
            line_mass: 1.0,
            line_package_mass: 0.5,
            line_package_radius: 0.03,
            gravity: 2.0,
            roll_damping: 2.0,
            line_drag: 1.0,
            line_angular_drag: 2.0,
            balance_goal_height: 0.6,

            corridor_half_width: 0.15,
            corridor_end_x: 0.6,
            link_length: 0.2,
            wire_mass: 1.0,
            wire_mass_radius: 0.05,

            package_mass: 2.0,
            package_radius: 0.15,
            static_friction: 1.5,
            kinetic_friction: 1.2,
        }
    }
}

/// Full environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskId,
    pub n_agents: usize,
    /// Episode length in ticks.
    pub horizon: u32,
    /// Integration step, s.
    pub dt: f64,
    /// Arena spans `[-arena_halfwidth, arena_halfwidth]²`, m.
    pub arena_halfwidth: f64,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub params: TaskParams,
    pub seed: u64,
}

impl EnvConfig {
    pub fn for_task(task: TaskId) -> Self {
        Self {
            task,
            n_agents: task.default_agents(),
            horizon: 150,
            dt: 0.1,
            arena_halfwidth: 1.0,
            physics: PhysicsParams::default(),
            params: TaskParams::default(),
            seed: 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.task.obs_dim()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be > 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !(self.arena_halfwidth > 0.0) {
            return bad("arena_halfwidth must be > 0");
        }
        if self.physics.drag * self.dt >= 1.0 || self.physics.drag < 0.0 {
            return bad("drag * dt must lie in [0, 1)");
        }
        if !(self.physics.agent_mass > 0.0 && self.physics.max_speed > 0.0) {
            return bad("agent mass and max speed must be > 0");
        }
        let n = self.n_agents;
        let ok = match self.task {
            TaskId::Buzzwire => n == 2,
            _ => (1..=8).contains(&n),
        };
        if !ok {
            return Err(SimError::InvalidConfig(format!(
                "{} does not support {n} agents",
                self.task
            )));
        }
        Ok(())
    }
}
