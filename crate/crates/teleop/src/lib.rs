//! Websocket teleoperation for round-robin demonstration collection.
//!
//! A session runs the simulator at a fixed tick rate. In `r2bc_demo` mode
//! the client controls one agent per episode, assigned round-robin, while
//! the other agents run their current learned policies; finished episodes
//! go to that agent's buffer and trigger refits on the usual schedule. In
//! `jbc_demo` mode the client drives every agent. In
//! `eval_with_interventions` mode the learned policies drive and the client
//! may take over one agent for a few seconds, a limited number of times per
//! episode.
//!
//! Between client messages the last action is held; each episode starts
//! from a held action of zero.

pub mod driver;
pub mod protocol;
pub mod server;
pub mod session;

pub use driver::{scripted_client_driver, DriverOptions, DriverReport};
pub use protocol::{ClientKind, ClientMessage, ErrorCode, Mode, ServerMessage, PROTOCOL_VERSION};
pub use server::{serve, serve_connection, SessionSummary};
pub use session::{Session, SessionConfig, SessionError};
