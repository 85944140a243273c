use std::time::{Duration, Instant};

use geoar_core::eval::{run_scenario, samples_csv_row, ScenarioConfig};
use geoar_core::protocol::ThrottlePolicy;
use geoar_core::sim::SensorKind;
use geoar_relay::e2e::{run_scenario_via_relay, RelayRunOptions};
use geoar_relay::{RelayConfig, RelayServer};

const SPEEDUP: f64 = 100.0;

async fn scaled_relay(cfg: &ScenarioConfig) -> RelayServer {
    let ms = (cfg.throttle.min_interval_ms as f64 / SPEEDUP).round() as u64;
    RelayServer::start(RelayConfig {
        throttle: ThrottlePolicy::uniform(ms),
        ..RelayConfig::ephemeral()
    })
    .await
    .unwrap()
}

#[tokio::test]
async fn ideal_scenario_is_exact_through_the_relay() {
    let cfg = ScenarioConfig::ideal();
    let server = scaled_relay(&cfg).await;
    let t0 = Instant::now();
    let run = run_scenario_via_relay(&cfg, server.tcp_addr(), &RelayRunOptions::accelerated(&cfg, SPEEDUP))
        .await
        .unwrap();
    eprintln!("relay run {:?}, {} sent, {} delivered", t0.elapsed(), run.positions_sent, run.positions_delivered);
    assert_eq!(run.output.samples.len(), 14);
    for s in &run.output.samples {
        assert!(s.error_m < 1e-6, "{s:?}");
    }
    let expected: Vec<String> = run.output.samples.iter().map(|s| samples_csv_row(s).unwrap()).collect();
    assert_eq!(run.console_rows, expected);
    let m = server.metrics();
    let t = m.totals();
    assert_eq!(t.accepted + t.dropped, run.positions_sent);
    assert_eq!(t.accepted, run.positions_delivered);
    assert_eq!(t.rejected, 0);
    assert_eq!(m.slow_disconnects, 0);
}

#[tokio::test]
async fn unpaced_relay_samples_the_parked_vehicle() {
    let mut cfg = ScenarioConfig::default_scenario();
    cfg.seed = 7;
    let server = RelayServer::start(RelayConfig {
        throttle: ThrottlePolicy::uniform(0),
        ..RelayConfig::ephemeral()
    })
    .await
    .unwrap();
    let opts = RelayRunOptions {
        step_period: Duration::ZERO,
        wait: Duration::from_secs(5),
    };
    let run = run_scenario_via_relay(&cfg, server.tcp_addr(), &opts).await.unwrap();
    let local = run_scenario(&{
        let mut c = cfg.clone();
        c.throttle = ThrottlePolicy::uniform(0);
        c
    })
    .unwrap();
    assert_eq!(run.positions_delivered, run.positions_sent);
    let keys = |v: &[geoar_core::eval::ErrorSample]| {
        v.iter().map(|s| (s.location_id.clone(), s.sensor_kind)).collect::<Vec<_>>()
    };
    assert_eq!(keys(&run.output.samples), keys(&local.samples));
    // a fix from before the stop would put the RTK overlay meters away
    for s in run.output.samples.iter().filter(|s| s.sensor_kind == SensorKind::Rtk) {
        assert!(s.error_m < 2.0, "{s:?}");
    }
}

