//! Websocket transport around [`Session`].

use crate::protocol::{parse_client, to_text, ServerMessage};
use crate::session::{Session, SessionError};
use futures_util::{SinkExt, StreamExt};
use r2bc::Scalar;
use std::path::PathBuf;
use std::time::Duration;
use tokio::net::{TcpListener, TcpStream};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// What a finished connection left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub episodes_done: usize,
    pub discarded: Vec<u64>,
    pub completed: bool,
    pub ticks: u64,
}

/// Serves one client on `stream` until it leaves or the session completes,
/// then writes the session outputs into `out_dir`.
pub async fn serve_connection<S: Scalar>(stream: TcpStream, mut session: Session<S>, out_dir: Option<PathBuf>) -> Result<(Session<S>, SessionSummary), ServeError> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let cfg = session.config().clone();
    let mut timer = tokio::time::interval(Duration::from_secs_f64(1.0 / cfg.tick_hz));
    timer.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut ticks = 0u64;
    loop {
        let mut out: Vec<ServerMessage> = Vec::new();
        tokio::select! {
            frame = rx.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    match parse_client(text.as_str()) {
                        Ok(msg) => out.extend(session.handle(msg)),
                        Err(e) => out.push(e.to_message()),
                    }
                    if cfg.sync {
                        while session.ready_to_step() {
                            out.extend(session.tick()?);
                            ticks += 1;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => {
                    session.disconnect();
                    break;
                }
                Some(Ok(_)) => {}
            },
            _ = timer.tick(), if !cfg.sync && session.in_episode() => {
                out.extend(session.tick()?);
                ticks += 1;
            }
        }
        for msg in &out {
            if tx.send(Message::Text(to_text(msg).into())).await.is_err() {
                session.disconnect();
                break;
            }
        }
        if session.is_done() {
            let _ = tx.send(Message::Close(None)).await;
            break;
        }
    }
    if let Some(dir) = out_dir {
        session.save(&dir)?;
    }
    let summary = SessionSummary { episodes_done: session.episodes_done(), discarded: session.discarded().to_vec(), completed: session.is_done(), ticks };
    tracing::info!(?summary, "session closed");
    Ok((session, summary))
}

/// Accepts clients one at a time; each gets a fresh session from
/// `make_session` and its own numbered output directory. Stops after
/// `max_sessions` connections when given.
pub async fn serve<S, F>(listener: TcpListener, mut make_session: F, out_dir: Option<PathBuf>, max_sessions: Option<usize>) -> Result<Vec<SessionSummary>, ServeError>
where
    S: Scalar,
    F: FnMut() -> Result<Session<S>, SessionError>,
{
    let mut summaries = Vec::new();
    while max_sessions.is_none_or(|m| summaries.len() < m) {
        let (stream, peer) = listener.accept().await?;
        tracing::info!(%peer, "client connected");
        let dir = out_dir.as_ref().map(|d| d.join(format!("session_{}", summaries.len())));
        match serve_connection(stream, make_session()?, dir).await {
            Ok((_, summary)) => summaries.push(summary),
            Err(ServeError::Ws(e)) => tracing::warn!(%e, "handshake failed"),
            Err(e) => return Err(e),
        }
    }
    Ok(summaries)
}
