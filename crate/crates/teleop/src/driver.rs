//! Scripted websocket client that stands in for the human demonstrator.

use crate::protocol::{ClientKind, ClientMessage, ErrorCode, Mode, ServerMessage, PROTOCOL_VERSION};
use futures_util::{SinkExt, StreamExt};
use r2bc::experts::ExpertPolicy;
use r2bc::rng::{stream_rng, Rng, Stream};
use r2bc::sim::AgentObservation;
use std::time::Instant;
use tokio_tungstenite::tungstenite::Message;

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("bad server frame: {0}")]
    Frame(String),
    #[error("expert: {0}")]
    Expert(#[from] r2bc::experts::ExpertError),
}

#[derive(Debug, Clone, Default)]
pub struct DriverOptions {
    /// Seed of the run whose demonstrator noise streams are replayed.
    pub run_seed: u64,
    /// Close the connection once this episode reaches this tick.
    pub disconnect_at: Option<(u64, u32)>,
    /// Frames sent verbatim right after the handshake.
    pub extra_frames: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DriverReport {
    pub episodes_recorded: usize,
    pub state_frames: usize,
    /// Wall-clock duration of each finished episode.
    pub episode_secs: Vec<f64>,
    pub errors: Vec<(ErrorCode, String)>,
    pub completed: bool,
    pub demo_agents: Vec<usize>,
}

fn encode(msg: &ClientMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("client messages serialize").into())
}

/// Connects to `url` and demonstrates with `expert` until the server
/// reports the session complete or the connection ends.
///
/// Episode `e` draws its noise from the same stream a scripted round-robin
/// run with seed `run_seed` uses, so both paths label identically.
pub async fn scripted_client_driver(url: &str, expert: &ExpertPolicy, opts: DriverOptions) -> Result<DriverReport, DriverError> {
    let (ws, _) = tokio_tungstenite::connect_async(url).await?;
    let (mut tx, mut rx) = ws.split();
    tx.send(encode(&ClientMessage::Hello { client: ClientKind::Script, protocol: PROTOCOL_VERSION })).await?;
    for f in &opts.extra_frames {
        tx.send(Message::Text(f.clone().into())).await?;
    }
    let mut report = DriverReport::default();
    let mut mode = Mode::R2bcDemo;
    let mut noise: Option<Rng> = None;
    let mut episode = 0u64;
    let mut started = Instant::now();
    while let Some(frame) = rx.next().await {
        let text = match frame? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let msg: ServerMessage = serde_json::from_str(text.as_str()).map_err(|e| DriverError::Frame(format!("{e}: {text}")))?;
        let mut replies = Vec::new();
        match msg {
            ServerMessage::Hello { mode: m, .. } => {
                mode = m;
                replies.push(ClientMessage::EpisodeStart {});
            }
            ServerMessage::EpisodeStart { episode: e, demo_agent, .. } => {
                episode = e;
                noise = Some(stream_rng(opts.run_seed, Stream::ExpertNoise, e));
                started = Instant::now();
                if let Some(d) = demo_agent {
                    report.demo_agents.push(d);
                }
            }
            ServerMessage::State { tick, demo_agent, obs, done, .. } => {
                report.state_frames += 1;
                if opts.disconnect_at == Some((episode, tick)) {
                    let _ = tx.send(Message::Close(None)).await;
                    break;
                }
                if done {
                    continue;
                }
                let rng = noise.as_mut().ok_or_else(|| DriverError::Frame("state before episode_start".into()))?;
                let obs: Vec<AgentObservation> = obs.into_iter().map(AgentObservation).collect();
                match (mode, demo_agent) {
                    (Mode::R2bcDemo, Some(d)) => {
                        let a = expert.expert_single(&obs[d], d, rng)?;
                        replies.push(ClientMessage::Action { agent_id: d, action: a.0 });
                    }
                    (Mode::JbcDemo, _) => {
                        let joint = expert.expert_joint(&obs, rng)?;
                        for (i, a) in joint.per_agent.iter().enumerate() {
                            replies.push(ClientMessage::Action { agent_id: i, action: a.0 });
                        }
                    }
                    _ => {}
                }
            }
            ServerMessage::EpisodeEnd { recorded, .. } => {
                if recorded {
                    report.episodes_recorded += 1;
                    report.episode_secs.push(started.elapsed().as_secs_f64());
                }
                // after the last episode the server has already moved on to
                // `done` and closes, so this request goes unanswered
                replies.push(ClientMessage::EpisodeStart {});
            }
            ServerMessage::Done { .. } => {
                report.completed = true;
            }
            ServerMessage::Error { code, message } => report.errors.push((code, message)),
            ServerMessage::InterveneStart { .. } | ServerMessage::InterveneEnd { .. } => {}
        }
        for r in &replies {
            if tx.send(encode(r)).await.is_err() {
                return Ok(report);
            }
        }
        if report.completed {
            break;
        }
    }
    Ok(report)
}
