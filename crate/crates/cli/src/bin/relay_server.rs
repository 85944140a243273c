use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use anyhow::Result;
use clap::Parser;
use geoar_core::protocol::ThrottlePolicy;
use geoar_relay::{RelayConfig, RelayServer, DEFAULT_QUEUE_BOUND, DEFAULT_TCP_PORT, DEFAULT_WS_PORT};

/// Relays sensor positions to display and console clients.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Newline-delimited envelope stream port.
    #[arg(long, default_value_t = DEFAULT_TCP_PORT)]
    port: u16,
    /// WebSocket port for browser clients; 0 disables it.
    #[arg(long, default_value_t = DEFAULT_WS_PORT)]
    ws_port: u16,
    /// Minimum spacing of accepted positions per sensor.
    #[arg(long, default_value_t = ThrottlePolicy::DEFAULT_MIN_INTERVAL_MS)]
    min_interval_ms: u64,
    /// Outbound envelopes a client may lag behind before it is dropped.
    #[arg(long, default_value_t = DEFAULT_QUEUE_BOUND)]
    queue_bound: usize,
    /// Broadcast server METRICS this often; off when omitted.
    #[arg(long)]
    metrics_interval_s: Option<f64>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
}

#[tokio::main]
async fn main() -> Result<()> {
    geoar_cli::init_logging();
    let args = Args::parse();
    let metrics_interval = match args.metrics_interval_s {
        Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
        Some(s) => anyhow::bail!("--metrics-interval-s must be > 0, got {s}"),
        None => None,
    };
    let config = RelayConfig {
        tcp_addr: SocketAddr::new(args.bind, args.port),
        ws_addr: (args.ws_port != 0).then(|| SocketAddr::new(args.bind, args.ws_port)),
        throttle: ThrottlePolicy::uniform(args.min_interval_ms),
        queue_bound: args.queue_bound,
        metrics_interval,
        ..RelayConfig::default()
    };
    let server = RelayServer::start(config).await?;
    eprintln!("relay-server: stream {} websocket {:?}", server.tcp_addr(), server.ws_addr());
    tokio::select! {
        _ = tokio::signal::ctrl_c() => eprintln!("relay-server: shutting down"),
        _ = server.serve() => {}
    }
    Ok(())
}
