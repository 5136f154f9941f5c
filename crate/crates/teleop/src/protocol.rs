//! Wire messages: one JSON object per websocket text frame, tagged by
//! `type`.

use r2bc::sim::{ObjectKind, WorldState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    /// A person at the browser client.
    Ui,
    /// A scripted demonstrator.
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    R2bcDemo,
    JbcDemo,
    EvalWithInterventions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello { client: ClientKind, protocol: u32 },
    /// Begin the next episode.
    EpisodeStart {},
    /// Abandon the running episode; nothing from it is recorded.
    EpisodeEnd {},
    Action { agent_id: usize, action: [f64; 2] },
    InterveneStart { agent_id: usize },
    InterveneEnd { agent_id: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub kind: ObjectKind,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub agent_id: usize,
    pub episode: u64,
    pub start_tick: u32,
    pub unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: u32,
        mode: Mode,
        task: String,
        n_agents: usize,
        tick_hz: f64,
        sync: bool,
    },
    EpisodeStart {
        episode: u64,
        demo_agent: Option<usize>,
        seed: u64,
    },
    State {
        tick: u32,
        demo_agent: Option<usize>,
        agents: Vec<AgentView>,
        objects: Vec<ObjectView>,
        reward: f64,
        interventions_left: u32,
        /// Per-agent observation vectors, so scripted clients act on exactly
        /// what a learned policy would see.
        obs: Vec<Vec<f64>>,
        /// This frame is the episode's last.
        done: bool,
    },
    InterveneStart {
        agent_id: usize,
        ticks: u32,
    },
    InterveneEnd {
        agent_id: usize,
    },
    EpisodeEnd {
        episode: u64,
        #[serde(rename = "return")]
        episode_return: f64,
        recorded: bool,
        /// Episodes recorded so far in this session.
        episodes_done: usize,
    },
    /// All requested episodes are recorded; outputs have been written.
    Done {
        episodes: usize,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    ProtocolMismatch,
    NotReady,
    BadAgent,
    BadAction,
    NoInterventionsLeft,
    WrongMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{code:?}: {message}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::Error { code: self.code, message: self.message.clone() }
    }
}

const CLIENT_TYPES: [&str; 6] = ["hello", "episode_start", "episode_end", "action", "intervene_start", "intervene_end"];

/// Parses one client frame.
pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::Malformed, e.to_string()))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "missing string field `type`"))?;
    if !CLIENT_TYPES.contains(&kind) {
        return Err(ProtocolError::new(ErrorCode::UnknownType, format!("unknown message type `{kind}`")));
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| ProtocolError::new(ErrorCode::Malformed, e.to_string()))?;
    if let ClientMessage::Action { action, .. } = &msg {
        if !action.iter().all(|a| a.is_finite() && (-1.0..=1.0).contains(a)) {
            return Err(ProtocolError::new(ErrorCode::BadAction, format!("action components must lie in [-1, 1], got {action:?}")));
        }
    }
    Ok(msg)
}

pub fn to_text(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

pub fn agent_views(state: &WorldState) -> Vec<AgentView> {
    state.agents.iter().map(|a| AgentView { pos: [a.pos.x, a.pos.y], vel: [a.vel.x, a.vel.y] }).collect()
}

pub fn object_views(state: &WorldState) -> Vec<ObjectView> {
    state
        .objects
        .iter()
        .map(|o| ObjectView { kind: o.kind, pos: [o.pos.x, o.pos.y], vel: [o.vel.x, o.vel.y], angle: o.angle })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_client_type() {
        assert_eq!(parse_client(r#"{"type":"hello","client":"ui","protocol":1}"#).unwrap(), ClientMessage::Hello { client: ClientKind::Ui, protocol: 1 });
        assert_eq!(parse_client(r#"{"type":"episode_start"}"#).unwrap(), ClientMessage::EpisodeStart {});
        assert_eq!(parse_client(r#"{"type":"episode_end"}"#).unwrap(), ClientMessage::EpisodeEnd {});
        assert_eq!(parse_client(r#"{"type":"action","agent_id":2,"action":[0.5,-1]}"#).unwrap(), ClientMessage::Action { agent_id: 2, action: [0.5, -1.0] });
        assert_eq!(parse_client(r#"{"type":"intervene_start","agent_id":0}"#).unwrap(), ClientMessage::InterveneStart { agent_id: 0 });
        assert_eq!(parse_client(r#"{"type":"intervene_end","agent_id":0}"#).unwrap(), ClientMessage::InterveneEnd { agent_id: 0 });
    }

    #[test]
    fn rejects_bad_frames_with_codes() {
        assert_eq!(parse_client("{not json").unwrap_err().code, ErrorCode::Malformed);
        assert_eq!(parse_client(r#"{"agent_id":1}"#).unwrap_err().code, ErrorCode::Malformed);
        assert_eq!(parse_client(r#"{"type":"teleport"}"#).unwrap_err().code, ErrorCode::UnknownType);
        assert_eq!(parse_client(r#"{"type":"action","agent_id":0}"#).unwrap_err().code, ErrorCode::Malformed);
        assert_eq!(parse_client(r#"{"type":"action","agent_id":0,"action":[1.5,0]}"#).unwrap_err().code, ErrorCode::BadAction);
        assert_eq!(parse_client(r#"{"type":"hello","client":"bot","protocol":1}"#).unwrap_err().code, ErrorCode::Malformed);
    }

    #[test]
    fn state_frame_shape() {
        let msg = ServerMessage::State {
            tick: 3,
            demo_agent: Some(1),
            agents: vec![AgentView { pos: [0.0, 1.0], vel: [0.5, 0.0] }],
            objects: vec![],
            reward: -0.25,
            interventions_left: 2,
            obs: vec![vec![0.1]],
            done: false,
        };
        let v: serde_json::Value = serde_json::from_str(&to_text(&msg)).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["tick"], 3);
        assert_eq!(v["demo_agent"], 1);
        assert_eq!(v["agents"][0]["pos"], serde_json::json!([0.0, 1.0]));
        assert_eq!(v["interventions_left"], 2);
        let end = to_text(&ServerMessage::EpisodeEnd { episode: 0, episode_return: 1.5, recorded: true, episodes_done: 1 });
        assert!(end.contains(r#""return":1.5"#));
    }
}
