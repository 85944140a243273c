//! Relay server for position, command and sample envelopes.
//!
//! Two endpoints carry the same newline-delimited JSON envelope schema
//! (see [`geoar_core::protocol::Envelope`]):
//!
//! * a TCP stream endpoint (default port 4710), one envelope per line;
//! * a WebSocket endpoint (default port 4711), one envelope per text frame.
//!
//! Every connection starts with `HELLO` declaring its role. Sensors publish
//! `POSITION` envelopes, which are throttled per `sensor_id` (drop, never
//! queue) and relayed byte-for-byte to every display and console session.
//! Consoles send `COMMAND` and `SAMPLE_MARK`; displays send `METRICS`
//! (sample results, one samples-CSV row per line), which are forwarded to
//! consoles. The server answers
//! with `ACK`/`NACK` and periodically broadcasts its own `METRICS`.

mod client;
pub mod e2e;
pub mod live;
mod hub;
mod session;

pub use client::{ClientError, RelayClient, RelayReader, RelayWriter};
pub use hub::{
    Hub, LatencySummary, MetricsSnapshot, Outbound, SensorCounters, SessionId, SessionInfo, Verdict,
};

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use geoar_core::protocol::{MsgType, Role, ThrottlePolicy};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_util::codec::{Framed, LinesCodec};

pub const DEFAULT_TCP_PORT: u16 = 4710;
pub const DEFAULT_WS_PORT: u16 = 4711;
pub const DEFAULT_QUEUE_BOUND: usize = 256;
pub const HELLO_TIMEOUT: Duration = Duration::from_secs(5);
/// Longest accepted envelope line.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub tcp_addr: SocketAddr,
    /// `None` disables the WebSocket endpoint.
    pub ws_addr: Option<SocketAddr>,
    pub throttle: ThrottlePolicy,
    /// Outbound envelopes a session may have queued before it is
    /// disconnected as a slow consumer.
    pub queue_bound: usize,
    /// Period of server METRICS broadcasts; `None` disables them.
    pub metrics_interval: Option<Duration>,
    pub hello_timeout: Duration,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            tcp_addr: SocketAddr::from(([0, 0, 0, 0], DEFAULT_TCP_PORT)),
            ws_addr: Some(SocketAddr::from(([0, 0, 0, 0], DEFAULT_WS_PORT))),
            throttle: ThrottlePolicy::default(),
            queue_bound: DEFAULT_QUEUE_BOUND,
            metrics_interval: None,
            hello_timeout: HELLO_TIMEOUT,
        }
    }
}

impl RelayConfig {
    /// Loopback, OS-assigned ports. Used by tests and in-process runs.
    pub fn ephemeral() -> Self {
        RelayConfig {
            tcp_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            ws_addr: Some(SocketAddr::from(([127, 0, 0, 1], 0))),
            ..RelayConfig::default()
        }
    }
}

/// A running relay. Dropping it stops the listeners and closes all sessions.
pub struct RelayServer {
    hub: Arc<Hub>,
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl RelayServer {
    pub async fn start(config: RelayConfig) -> io::Result<Self> {
        let hub = Arc::new(Hub::new(&config));
        let (shutdown, shutdown_rx) = watch::channel(false);
        let mut tasks = Vec::new();

        let tcp = TcpListener::bind(config.tcp_addr).await?;
        let tcp_addr = tcp.local_addr()?;
        tasks.push(tokio::spawn(accept_tcp(
            tcp,
            hub.clone(),
            config.hello_timeout,
            shutdown_rx.clone(),
        )));

        let ws_addr = match config.ws_addr {
            Some(addr) => {
                let ws = TcpListener::bind(addr).await?;
                let local = ws.local_addr()?;
                tasks.push(tokio::spawn(accept_ws(
                    ws,
                    hub.clone(),
                    config.hello_timeout,
                    shutdown_rx.clone(),
                )));
                Some(local)
            }
            None => None,
        };

        if let Some(period) = config.metrics_interval {
            let hub = hub.clone();
            tasks.push(tokio::spawn(async move {
                let mut tick = tokio::time::interval(period);
                tick.tick().await;
                loop {
                    tick.tick().await;
                    let snapshot = serde_json::to_string(&hub.metrics()).expect("metrics serialize");
                    hub.broadcast(&[Role::Hmd, Role::Console], hub.server_line(MsgType::Metrics, snapshot));
                }
            }));
        }

        tracing::info!(%tcp_addr, ?ws_addr, "relay listening");
        Ok(RelayServer {
            hub,
            tcp_addr,
            ws_addr,
            shutdown,
            tasks,
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.hub.metrics()
    }

    /// Runs until the listeners fail (normally forever).
    pub async fn serve(mut self) {
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }
}

impl Drop for RelayServer {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn accept_tcp(
    listener: TcpListener,
    hub: Arc<Hub>,
    hello_timeout: Duration,
    shutdown: watch::Receiver<bool>,
) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        tracing::debug!(%peer, "tcp connection");
        let (sink, stream) =
            Framed::new(stream, LinesCodec::new_with_max_length(MAX_LINE_BYTES)).split();
        tokio::spawn(session::run_session(hub.clone(), hello_timeout, shutdown.clone(), stream, sink));
    }
}

async fn accept_ws(
    listener: TcpListener,
    hub: Arc<Hub>,
    hello_timeout: Duration,
    shutdown: watch::Receiver<bool>,
) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        tracing::debug!(%peer, "websocket connection");
        tokio::spawn(serve_ws(stream, hub.clone(), hello_timeout, shutdown.clone()));
    }
}

async fn serve_ws(stream: TcpStream, hub: Arc<Hub>, hello_timeout: Duration, shutdown: watch::Receiver<bool>) {
    let ws = match tokio::time::timeout(hello_timeout, tokio_tungstenite::accept_async(stream)).await {
        Ok(Ok(ws)) => ws,
        Ok(Err(e)) => return tracing::debug!("websocket handshake failed: {e}"),
        Err(_) => return tracing::debug!("websocket handshake timed out"),
    };
    let (sink, stream) = ws.split();
    let incoming = Box::pin(stream.filter_map(|m| async move {
        match m {
            Ok(Message::Text(t)) => Some(Ok(t.as_str().to_owned())),
            Ok(Message::Binary(b)) => {
                Some(String::from_utf8(b.to_vec()).map_err(|e| format!("binary frame: {e}")))
            }
            Ok(Message::Close(_)) => Some(Err("closed by peer".to_owned())),
            Ok(_) => None,
            Err(e) => Some(Err(e.to_string())),
        }
    }));
    let outgoing = Box::pin(sink.with(|line: String| async move {
        Ok::<_, tokio_tungstenite::tungstenite::Error>(Message::text(line))
    }));
    session::run_session(hub, hello_timeout, shutdown, incoming, outgoing).await;
}
