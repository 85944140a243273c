use std::fmt::Display;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{Sink, SinkExt, Stream, StreamExt};
use geoar_core::protocol::{Envelope, MsgType, Role};
use serde_json::json;
use tokio::sync::watch;

use crate::hub::{Hub, SessionId, Verdict};

const INGEST_BATCH: u32 = 16;

/// Drives one connection: HELLO handshake, then reads client envelopes and
/// writes queued lines until either side closes, the hub disconnects the
/// session or the server shuts down.
pub(crate) async fn run_session<St, Si, E>(
    hub: Arc<Hub>,
    hello_timeout: Duration,
    mut shutdown: watch::Receiver<bool>,
    mut incoming: St,
    mut outgoing: Si,
) where
    St: Stream<Item = Result<String, E>> + Unpin,
    Si: Sink<String> + Unpin,
    E: Display,
{
    let role = match tokio::time::timeout(hello_timeout, incoming.next()).await {
        Err(_) => {
            refuse(&hub, &mut outgoing, format!("no HELLO within {hello_timeout:?}")).await;
            return;
        }
        Ok(None) => return,
        Ok(Some(Err(e))) => {
            refuse(&hub, &mut outgoing, format!("read error before HELLO: {e}")).await;
            return;
        }
        Ok(Some(Ok(line))) => match Envelope::from_line(&line) {
            Ok(env) if env.msg_type == MsgType::Hello && env.role != Role::Server => env.role,
            Ok(env) => {
                refuse(&hub, &mut outgoing, format!("first message must be HELLO, got {}", env.msg_type)).await;
                return;
            }
            Err(e) => {
                refuse(&hub, &mut outgoing, e.to_string()).await;
                return;
            }
        },
    };

    let (id, mut rx, kill) = hub.register(role);
    tracing::debug!(session = id, %role, "registered");
    hub.send_to(id, hub.server_line(MsgType::Ack, json!({ "session": id, "role": role }).to_string()));

    let mut handled = 0u32;
    loop {
        tokio::select! {
            _ = kill.notified() => break,
            _ = shutdown.changed() => break,
            item = rx.recv() => {
                let Some(out) = item else { break };
                tokio::select! {
                    r = outgoing.send(out.line.to_string()) => if r.is_err() { break },
                    _ = kill.notified() => break,
                }
                if let Some(t) = out.ingested_at {
                    hub.record_latency(t.elapsed());
                }
            }
            line = incoming.next() => match line {
                Some(Ok(line)) => {
                    handle_line(&hub, id, role, &line);
                    // buffered lines arrive without touching the socket; let writers drain
                    handled += 1;
                    if handled.is_multiple_of(INGEST_BATCH) {
                        tokio::task::yield_now().await;
                    }
                }
                Some(Err(e)) => {
                    tracing::debug!(session = id, "read error: {e}");
                    break;
                }
                None => break,
            },
        }
    }
    hub.unregister(id);
    let _ = outgoing.close().await;
    tracing::debug!(session = id, "closed");
}

async fn refuse<Si: Sink<String> + Unpin>(hub: &Hub, outgoing: &mut Si, reason: String) {
    tracing::debug!("refusing connection: {reason}");
    let line = hub.server_line(MsgType::Nack, json!({ "ref_seq": null, "reason": reason }).to_string());
    let _ = outgoing.send(line.to_string()).await;
    let _ = outgoing.close().await;
}

fn nack(hub: &Hub, id: SessionId, ref_seq: Option<u64>, reason: impl Display) {
    let payload = json!({ "ref_seq": ref_seq, "reason": reason.to_string() }).to_string();
    hub.send_to(id, hub.server_line(MsgType::Nack, payload));
}

fn handle_line(hub: &Hub, id: SessionId, role: Role, line: &str) {
    if line.trim().is_empty() {
        return;
    }
    let env = match Envelope::from_line(line) {
        Ok(env) => env,
        Err(e) => return nack(hub, id, None, e),
    };
    if env.msg_type == MsgType::Hello {
        return nack(hub, id, Some(env.seq), "duplicate HELLO");
    }
    if let Err(e) = env.check_client(role) {
        return nack(hub, id, Some(env.seq), e);
    }
    let verdict = match env.msg_type {
        MsgType::Position => hub.ingest_position(&env, line),
        MsgType::Command => hub.route_command(&env, line),
        MsgType::SampleMark => hub.route_sample_mark(&env, line),
        MsgType::Metrics => hub.route_hmd_metrics(line),
        other => Verdict::Rejected(format!("{other} is server-only")),
    };
    match verdict {
        Verdict::Rejected(reason) => nack(hub, id, Some(env.seq), reason),
        Verdict::Relayed(n) if matches!(env.msg_type, MsgType::Command | MsgType::SampleMark) => {
            let payload = json!({ "ref_seq": env.seq, "delivered": n }).to_string();
            hub.send_to(id, hub.server_line(MsgType::Ack, payload));
        }
        Verdict::Relayed(_) | Verdict::Dropped => {}
    }
}
