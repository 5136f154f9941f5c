use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::ops::{Deref, Index};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub pos: Vec2,
    pub vel: Vec2,
    /// Heading in radians, follows the velocity direction.
    pub heading: f64,
}

impl AgentBody {
    pub fn at(pos: Vec2) -> Self {
        Self {
            pos,
            vel: Vec2::ZERO,
            heading: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Goal,
    Package,
    Line,
    Mass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBody {
    pub kind: ObjectKind,
    pub pos: Vec2,
    pub vel: Vec2,
    pub angle: f64,
    pub ang_vel: f64,
}

impl ObjectBody {
    pub fn new(kind: ObjectKind, pos: Vec2) -> Self {
        Self {
            kind,
            pos,
            vel: Vec2::ZERO,
            angle: 0.0,
            ang_vel: 0.0,
        }
    }
}

/// Sticky per-episode flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskEvents {
    /// Balance: the package left the rod or the rod hit the floor.
    pub dropped: bool,
    /// Transport: the goal bonus has been paid.
    pub bonus_awarded: bool,
}

/// Full simulator state at one tick.
///
/// `seed` records the reset seed; stepping never draws random numbers, so
/// no generator state is carried past the reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u32,
    pub agents: Vec<AgentBody>,
    pub objects: Vec<ObjectBody>,
    pub events: TaskEvents,
    pub seed: u64,
}

impl WorldState {
    pub fn object(&self, kind: ObjectKind) -> Option<&ObjectBody> {
        self.objects.iter().find(|o| o.kind == kind)
    }

    pub fn objects_of(&self, kind: ObjectKind) -> impl Iterator<Item = &ObjectBody> {
        self.objects.iter().filter(move |o| o.kind == kind)
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().all(|a| a.pos.is_finite() && a.vel.is_finite() && a.heading.is_finite())
            && self
                .objects
                .iter()
                .all(|o| o.pos.is_finite() && o.vel.is_finite() && o.angle.is_finite() && o.ang_vel.is_finite())
    }
}

/// One agent's local observation vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentObservation(pub Vec<f64>);

impl AgentObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for AgentObservation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Planar action with components in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentAction(pub [f64; 2]);

impl AgentAction {
    pub const ZERO: AgentAction = AgentAction([0.0, 0.0]);

    pub fn new(x: f64, y: f64) -> Self {
        Self([x, y])
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self([v.x, v.y])
    }

    pub fn clamped(self) -> Self {
        Self([self.0[0].clamp(-1.0, 1.0), self.0[1].clamp(-1.0, 1.0)])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_vec2(self) -> Vec2 {
        Vec2::new(self.0[0], self.0[1])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAction {
    pub per_agent: Vec<AgentAction>,
}

impl JointAction {
    pub fn new(per_agent: Vec<AgentAction>) -> Self {
        Self { per_agent }
    }

    pub fn len(&self) -> usize {
        self.per_agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_agent.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, AgentAction> {
        self.per_agent.iter()
    }

    /// Concatenated `[a1x, a1y, a2x, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.per_agent.iter().flat_map(|a| a.0).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self::new(flat.chunks_exact(2).map(|c| AgentAction::new(c[0], c[1])).collect())
    }
}

impl Index<usize> for JointAction {
    type Output = AgentAction;
    fn index(&self, i: usize) -> &AgentAction {
        &self.per_agent[i]
    }
}
