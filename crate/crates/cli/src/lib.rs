//! Shared plumbing for the `eval` and `relay-server` binaries.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geoar_core::eval::{
    compare_samples, read_samples_csv, run_scenario, samples_to_csv, summary_to_csv, write_overlay_csv,
    CompareReport, ScenarioConfig, ScenarioOutput,
};
use geoar_core::protocol::ThrottlePolicy;
use geoar_relay::e2e::{run_scenario_via_relay, RelayRunOptions, RelayRunOutput};
use geoar_relay::{RelayConfig, RelayServer};

pub const REPORT_FILE: &str = "report.txt";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const OVERLAY_FILE: &str = "overlay.csv";

/// Reads a scenario file, or the built-in default scenario when `path` is
/// `None`, and applies a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ScenarioConfig::default_scenario(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Where the scenario's position messages travel.
#[derive(Debug, Clone)]
pub enum Transport {
    /// Encoded, throttled and decoded in-process on the scenario clock.
    InProcess,
    /// Through a loopback relay started for this run, paced `speedup` times
    /// faster than real time with the throttle interval scaled to match.
    LocalRelay { speedup: f64 },
    /// Through an already running relay, paced `speedup` times faster than
    /// real time. The relay's own throttle applies.
    Relay { addr: SocketAddr, speedup: f64 },
}

pub async fn run(cfg: &ScenarioConfig, transport: &Transport) -> Result<ScenarioOutput> {
    Ok(match transport {
        Transport::InProcess => run_scenario(cfg)?,
        Transport::LocalRelay { speedup } => run_local_relay(cfg, *speedup).await?.output,
        Transport::Relay { addr, speedup } => {
            run_scenario_via_relay(cfg, *addr, &RelayRunOptions::accelerated(cfg, *speedup))
                .await
                .with_context(|| format!("running through relay {addr}"))?
                .output
        }
    })
}

pub async fn run_local_relay(cfg: &ScenarioConfig, speedup: f64) -> Result<RelayRunOutput> {
    anyhow::ensure!(speedup.is_finite() && speedup > 0.0, "speedup must be > 0");
    let scale = |ms: u64| (ms as f64 / speedup).round() as u64;
    let mut throttle = ThrottlePolicy::uniform(scale(cfg.throttle.min_interval_ms));
    for (id, ms) in &cfg.throttle.per_sensor_ms {
        throttle.per_sensor_ms.insert(id.clone(), scale(*ms));
    }
    let server = RelayServer::start(RelayConfig {
        throttle,
        ws_addr: None,
        ..RelayConfig::ephemeral()
    })
    .await?;
    let out = run_scenario_via_relay(cfg, server.tcp_addr(), &RelayRunOptions::accelerated(cfg, speedup)).await?;
    Ok(out)
}

/// Writes report, samples, summary and overlay-log files into `dir`.
pub fn write_artifacts(dir: &Path, out: &ScenarioOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = |name: &str| dir.join(name);
    fs::write(path(REPORT_FILE), out.report.to_string())?;
    fs::write(path(SAMPLES_FILE), samples_to_csv(&out.samples)?)?;
    fs::write(path(SUMMARY_FILE), summary_to_csv(&out.report)?)?;
    let mut overlay = Vec::new();
    write_overlay_csv(&out.overlay_log, &mut overlay)?;
    fs::write(path(OVERLAY_FILE), overlay)?;
    Ok([REPORT_FILE, SAMPLES_FILE, SUMMARY_FILE, OVERLAY_FILE].map(path).to_vec())
}

pub fn compare_files(a: &Path, b: &Path) -> Result<CompareReport> {
    let read = |p: &Path| -> Result<_> {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        read_samples_csv(f).with_context(|| format!("reading {}", p.display()))
    };
    Ok(compare_samples(&read(a)?, &read(b)?))
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}
