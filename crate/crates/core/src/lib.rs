//! Multi-agent imitation learning from single-agent demonstrations.
//!
//! The crate bundles a deterministic 2D cooperative simulator with four
//! tasks, scripted demonstrators, a small feed-forward policy network with
//! exact gradients, demonstration buffers with a JSON Lines dataset format,
//! round-robin behavior cloning together with its joint-demonstration and
//! online baselines, and an evaluation harness.

pub mod algorithms;
pub mod demo;
pub mod eval;
pub mod experts;
pub mod geom;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod tasks;

pub use geom::Vec2;
pub use sim::{AgentAction, AgentObservation, EnvConfig, JointAction, TaskId, WorldState};

pub use policy::Scalar;

pub type PolicyNet32 = policy::PolicyNet<f32>;
pub type PolicyNet64 = policy::PolicyNet<f64>;
