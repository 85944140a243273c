//! Acceptance suite. Every criterion prints one PASS/FAIL line with its
//! measured values and runtime; the process fails if any criterion fails.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use geoar_cli::{load_config, run_local_relay, SAMPLES_FILE};
use geoar_core::eval::{
    replay_fixture, run_scenario, samples_to_csv, ErrorSample, ScenarioConfig, ScenarioOutput,
};
use geoar_core::geodesy::{destination, geo_to_local, initial_bearing, GeoPoint};
use geoar_core::protocol::{Envelope, MsgType, Role, Throttle, ThrottlePolicy};
use geoar_core::sim::{sample_fix, seeded_rng, NoiseModel, SensorKind};
use geoar_relay::e2e::{run_scenario_via_relay, RelayRunOptions};
use geoar_relay::{Hub, RelayClient, RelayConfig, RelayServer};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Suite {
    rt: tokio::runtime::Runtime,
    failed: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce(&tokio::runtime::Runtime) -> Outcome) {
        let t0 = Instant::now();
        let outcome = f(&self.rt);
        let took = t0.elapsed();
        let over = budget.is_some_and(|b| took > b);
        let (ok, detail) = match outcome {
            Ok(d) if over => (false, format!("{d}; over budget")),
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let budget = budget.map(|b| format!(" / {:.0} s", b.as_secs_f64())).unwrap_or_default();
        println!(
            "{} {name}: {detail} [{:.2} s{budget}]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        if !ok {
            self.failed.push(name.to_owned());
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gp(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).expect("valid coordinates")
}

fn mean_by_kind(samples: &[ErrorSample]) -> HashMap<SensorKind, f64> {
    let mut acc: HashMap<SensorKind, (f64, usize)> = HashMap::new();
    for s in samples {
        let e = acc.entry(s.sensor_kind).or_default();
        e.0 += s.error_m;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

fn fixture() -> Outcome {
    let out = Process::new(env!("CARGO_BIN_EXE_eval"))
        .arg("fixture")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("eval fixture exited {}", out.status))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let r = replay_fixture();
    let gps = r.stats_for(SensorKind::Gps).ok_or("no GPS stats")?;
    let rtk = r.stats_for(SensorKind::Rtk).ok_or("no RTK stats")?;
    let detail = format!(
        "GPS mean {:.4} std {:.4}, RTK mean {:.4}",
        gps.mean_m, gps.sample_std_m, rtk.mean_m
    );
    ensure((gps.mean_m - 8.906).abs() <= 0.001, || format!("{detail}: GPS mean"))?;
    ensure((gps.sample_std_m - 7.453).abs() <= 0.001, || format!("{detail}: GPS std"))?;
    ensure((rtk.mean_m - 0.793).abs() <= 0.001, || format!("{detail}: RTK mean"))?;
    for needle in ["8.906", "7.4533", "0.793", "8.907 m", "0.745 m", "0.126 m"] {
        ensure(text.contains(needle), || format!("{detail}: output lacks {needle:?}"))?;
    }
    Ok(detail)
}

fn assert_ideal(samples: &[ErrorSample]) -> Outcome {
    ensure(samples.len() == 14, || format!("{} samples, want 7 stops x 2 sensors", samples.len()))?;
    let worst = samples.iter().map(|s| s.error_m).fold(0.0, f64::max);
    ensure(worst < 1e-6, || format!("max error {worst:e} m"))?;
    Ok(format!("{} samples, max error {worst:.2e} m", samples.len()))
}

fn geodesy() -> Outcome {
    let mut rng = seeded_rng(2024, 0);
    let mut worst_rel = 0.0f64;
    for _ in 0..1000 {
        let r = gp(rng.random_range(-80.0..80.0), rng.random_range(-180.0..180.0));
        let b: f64 = rng.random_range(0.0..360.0);
        let d: f64 = rng.random_range(1.0..=10_000.0);
        let p = destination(&r, b, d);
        let v = geo_to_local(&r, &p).map_err(|e| e.to_string())?;
        let (s, c) = b.to_radians().sin_cos();
        let err = ((v.east_m - d * s).powi(2) + (v.north_m - d * c).powi(2)).sqrt();
        worst_rel = worst_rel.max(err / d);
    }
    ensure(worst_rel <= 1e-3, || format!("worst relative error {worst_rel:e}"))?;
    let r = gp(49.5, 6.36);
    let mut worst_b = 0.0f64;
    for (target, want) in [(gp(49.51, 6.36), 0.0), (gp(49.5, 6.37), 90.0), (gp(49.49, 6.36), 180.0)] {
        let b = initial_bearing(&r, &target).map_err(|e| e.to_string())?.degrees();
        let diff = (b - want + 180.0).rem_euclid(360.0) - 180.0;
        worst_b = worst_b.max(diff.abs());
    }
    ensure(worst_b <= 0.01, || format!("cardinal bearing off by {worst_b} deg"))?;
    Ok(format!(
        "1000 triples, worst |err|/delta {worst_rel:.2e}; cardinal bearings within {worst_b:.2e} deg"
    ))
}

fn noise() -> Outcome {
    let truth = gp(49.5, 6.36);
    let mut detail = String::new();
    for (i, sigma) in [NoiseModel::RTK_SIGMA_M, NoiseModel::GPS_SIGMA_M].into_iter().enumerate() {
        let model = NoiseModel::isotropic(sigma);
        let mut rng = seeded_rng(99, i as u64);
        let n = 100_000;
        let (mut se, mut sn, mut se2, mut sn2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = geo_to_local(&truth, &sample_fix(&truth, &model, &mut rng)).map_err(|e| e.to_string())?;
            se += v.east_m;
            sn += v.north_m;
            se2 += v.east_m * v.east_m;
            sn2 += v.north_m * v.north_m;
        }
        let nf = n as f64;
        let std = |s: f64, s2: f64| ((s2 - s * s / nf) / (nf - 1.0)).sqrt();
        let (de, dn) = (std(se, se2), std(sn, sn2));
        let _ = write!(detail, "sigma {sigma}: east {de:.4} north {dn:.4}; ");
        for got in [de, dn] {
            ensure((got / sigma - 1.0).abs() <= 0.02, || format!("{detail}outside 2%"))?;
        }
    }
    Ok(detail.trim_end_matches("; ").to_owned())
}

fn throttle_clocked() -> Outcome {
    // 100 Hz for 60 s on a simulated clock
    let mut t = Throttle::new(ThrottlePolicy::uniform(100));
    let mut accepted = Vec::new();
    for k in 0..6000u64 {
        let now = Duration::from_millis(10 * k);
        if t.admit("gps", now) {
            accepted.push(now);
        }
    }
    let min_gap = accepted.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(Duration::MAX);
    ensure(min_gap >= Duration::from_millis(100), || format!("gap {min_gap:?}"))?;
    let mut per_second = vec![0u32; 60];
    for a in &accepted {
        per_second[a.as_secs() as usize] += 1;
    }
    let (lo, hi) = (per_second.iter().min().unwrap(), per_second.iter().max().unwrap());
    ensure(*lo >= 9 && *hi <= 11, || format!("per-second counts {lo}..{hi}"))?;
    Ok(format!("60 s at 100 Hz: {lo}..{hi} accepted per second, min gap {} ms", min_gap.as_millis()))
}

fn throttle_relay(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let server = RelayServer::start(RelayConfig::ephemeral()).await.map_err(|e| e.to_string())?;
        let mut sensor = RelayClient::connect_sensor(server.tcp_addr(), "gps")
            .await
            .map_err(|e| e.to_string())?;
        let mut tick = tokio::time::interval(Duration::from_millis(10));
        let start = tokio::time::Instant::now();
        let mut sent = 0u64;
        while start.elapsed() < Duration::from_secs(1) {
            tick.tick().await;
            sent += 1;
            let msg = geoar_core::sim::SensorMessage {
                sensor_id: "gps".into(),
                kind: SensorKind::Gps,
                seq: sent,
                timestamp_ms: sent * 10,
                position: gp(49.5, 6.36),
                fix_quality: SensorKind::Gps.default_fix_quality(),
            };
            let env = Envelope::position("gps", sent, sent * 10, geoar_core::kml::encode_kml(&msg));
            sensor.send(&env).await.map_err(|e| e.to_string())?;
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            let c = server.metrics().sensors.get("gps").copied().unwrap_or_default();
            if c.accepted + c.dropped == sent {
                ensure((9..=11).contains(&c.accepted), || format!("{} accepted of {sent}", c.accepted))?;
                return Ok(format!("relay: {} accepted, {} dropped in 1 s", c.accepted, c.dropped));
            }
            ensure(Instant::now() < deadline, || format!("relay counted {} of {sent}", c.accepted + c.dropped))?;
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    })
}

fn position_line(id: &str, seq: u64) -> (Envelope, String) {
    let msg = geoar_core::sim::SensorMessage {
        sensor_id: id.into(),
        kind: SensorKind::Rtk,
        seq,
        timestamp_ms: seq,
        position: gp(49.5, 6.36),
        fix_quality: SensorKind::Rtk.default_fix_quality(),
    };
    let env = Envelope::position(id, seq, seq, geoar_core::kml::encode_kml(&msg));
    let line = env.to_line();
    (env, line)
}

/// Hub-level property: random schedules over several sensors, replayed
/// against subscribers, never reorder a sensor's seqs.
fn fifo_property() -> Outcome {
    let ids = ["a", "b", "c", "d"];
    let schedule = proptest::collection::vec(0..ids.len(), 250..=400);
    let mut runner = TestRunner::new(PropConfig {
        cases: 40,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let total = std::cell::Cell::new(0usize);
    let result = runner.run(&schedule, |order| {
        let hub = Hub::new(&RelayConfig {
            throttle: ThrottlePolicy::uniform(0),
            queue_bound: 1 << 12,
            ..RelayConfig::ephemeral()
        });
        let mut subs: Vec<_> = (0..2).map(|_| hub.register(Role::Hmd).1).collect();
        let mut next = [1u64; 4];
        for &i in &order {
            let (env, line) = position_line(ids[i], next[i]);
            next[i] += 1;
            hub.ingest_position(&env, &line);
        }
        total.set(total.get() + order.len());
        for rx in &mut subs {
            let mut last: HashMap<String, u64> = HashMap::new();
            let mut n = 0;
            while let Ok(out) = rx.try_recv() {
                let env = Envelope::from_line(&out.line).unwrap();
                let prev = last.insert(env.sensor_id.unwrap(), env.seq).unwrap_or(0);
                prop_assert!(env.seq > prev);
                n += 1;
            }
            prop_assert_eq!(n, order.len());
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("{} messages over 40 random schedules", total.get()))
}

/// The same property end to end over sockets: 10^4 positions from four
/// sensor connections in a seeded random order, two live subscribers.
fn fifo_relay(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let server = RelayServer::start(RelayConfig {
            throttle: ThrottlePolicy::uniform(0),
            ..RelayConfig::ephemeral()
        })
        .await
        .map_err(|e| e.to_string())?;
        let ids = ["a", "b", "c", "d"];
        let per_sensor = 2500u64;
        let total = per_sensor * ids.len() as u64;
        let mut readers = Vec::new();
        for _ in 0..2 {
            let (mut r, w) = RelayClient::connect(server.tcp_addr(), Role::Hmd)
                .await
                .map_err(|e| e.to_string())?
                .split();
            readers.push(tokio::spawn(async move {
                let _keep = w;
                let mut last: HashMap<String, u64> = HashMap::new();
                let mut n = 0;
                while n < total {
                    let env = match r.recv_timeout(Duration::from_secs(5)).await {
                        Ok(Some(env)) => env,
                        other => return Err(format!("after {n} positions: {other:?}")),
                    };
                    if env.msg_type != MsgType::Position {
                        continue;
                    }
                    let id = env.sensor_id.clone().unwrap_or_default();
                    let prev = last.insert(id.clone(), env.seq).unwrap_or(0);
                    if env.seq <= prev {
                        return Err(format!("{id}: seq {} after {prev}", env.seq));
                    }
                    n += 1;
                }
                Ok(())
            }));
        }
        let mut sensors = Vec::new();
        for id in ids {
            sensors.push(
                RelayClient::connect_sensor(server.tcp_addr(), id)
                    .await
                    .map_err(|e| e.to_string())?,
            );
        }
        let mut order: Vec<usize> = (0..ids.len())
            .flat_map(|i| std::iter::repeat_n(i, per_sensor as usize))
            .collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(31));
        let mut next = [1u64; 4];
        for i in order {
            let (env, _) = position_line(ids[i], next[i]);
            next[i] += 1;
            sensors[i].send(&env).await.map_err(|e| e.to_string())?;
        }
        for r in readers {
            r.await.map_err(|e| e.to_string())??;
        }
        let slow = server.metrics().slow_disconnects;
        ensure(slow == 0, || format!("{slow} subscribers disconnected"))?;
        Ok(format!("{total} positions, 2 subscribers, no inversions"))
    })
}

fn determinism() -> Outcome {
    let cfg = ScenarioConfig::default_scenario();
    let a = samples_to_csv(&run_scenario(&cfg).map_err(|e| e.to_string())?.samples).map_err(|e| e.to_string())?;
    let b = samples_to_csv(&run_scenario(&cfg).map_err(|e| e.to_string())?.samples).map_err(|e| e.to_string())?;
    ensure(a == b, || "in-process CSVs differ".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Process::new(env!("CARGO_BIN_EXE_eval"))
            .args(["run", "--seed", "42", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || format!("eval run exited {}", status.status))?;
        files.push(std::fs::read(out.join(SAMPLES_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(files[0] == files[1], || "CLI samples.csv differ".into())?;
    let cfg42 = load_config(None, Some(42)).map_err(|e| e.to_string())?;
    let lib = samples_to_csv(&run_scenario(&cfg42).map_err(|e| e.to_string())?.samples).map_err(|e| e.to_string())?;
    ensure(files[0] == lib.as_bytes(), || "CLI and library CSVs differ".into())?;
    Ok(format!("seed 1 in-process x2 and seed 42 via CLI x2: {} bytes identical", files[0].len()))
}

fn envelope_detail(gps: f64, rtk: f64, seeds: usize) -> Outcome {
    let detail = format!("{seeds} seeds: GPS mean {gps:.3} m, RTK mean {rtk:.3} m");
    ensure((4.0..=14.0).contains(&gps), || format!("{detail}: GPS outside [4, 14]"))?;
    ensure((0.4..=1.2).contains(&rtk), || format!("{detail}: RTK outside [0.4, 1.2]"))?;
    Ok(detail)
}

fn ensemble(outputs: &[ScenarioOutput]) -> (f64, f64) {
    let all: Vec<ErrorSample> = outputs.iter().flat_map(|o| o.samples.iter().cloned()).collect();
    let m = mean_by_kind(&all);
    (m[&SensorKind::Gps], m[&SensorKind::Rtk])
}

fn envelope() -> Outcome {
    let base = ScenarioConfig::default_scenario();
    let mut outs = Vec::with_capacity(100);
    for seed in 1..=100 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        outs.push(run_scenario(&cfg).map_err(|e| e.to_string())?);
    }
    let (gps, rtk) = ensemble(&outs);
    envelope_detail(gps, rtk, outs.len())
}

/// Same ensemble with every position crossing a loopback relay. The
/// scenario is not paced here, so the relay throttle is off; on the scenario
/// clock the 10 Hz sensors are never throttled at 100 ms either.
fn envelope_relay(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let base = ScenarioConfig::default_scenario();
        let opts = RelayRunOptions {
            step_period: Duration::ZERO,
            wait: Duration::from_secs(5),
        };
        let mut outs = Vec::with_capacity(100);
        for seed in 1..=100 {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let server = RelayServer::start(RelayConfig {
                throttle: ThrottlePolicy::uniform(0),
                ws_addr: None,
                ..RelayConfig::ephemeral()
            })
            .await
            .map_err(|e| e.to_string())?;
            let run = run_scenario_via_relay(&cfg, server.tcp_addr(), &opts)
                .await
                .map_err(|e| format!("seed {seed}: {e}"))?;
            outs.push(run.output);
        }
        let (gps, rtk) = ensemble(&outs);
        envelope_detail(gps, rtk, outs.len())
    })
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let mut suite = Suite { rt, failed: Vec::new() };
    let s = |n: u64| Some(Duration::from_secs(n));

    suite.check("field-trial fixture", s(1), |_| fixture());
    suite.check("ideal pipeline exactness (in-process)", s(5), |_| {
        assert_ideal(&run_scenario(&ScenarioConfig::ideal()).map_err(|e| e.to_string())?.samples)
    });
    suite.check("ideal pipeline exactness (relay, 100x real time)", s(5), |rt| {
        let out = rt
            .block_on(run_local_relay(&ScenarioConfig::ideal(), 100.0))
            .map_err(|e| format!("{e:#}"))?;
        let d = assert_ideal(&out.output.samples)?;
        Ok(format!("{d}; {} of {} positions delivered", out.positions_delivered, out.positions_sent))
    });
    suite.check("geodesy oracle equivalence", s(5), |_| geodesy());
    suite.check("noise calibration", s(10), |_| noise());
    suite.check("throttle conformance (scenario clock)", s(10), |_| throttle_clocked());
    suite.check("throttle conformance (relay, wall clock)", s(10), throttle_relay);
    suite.check("per-sensor FIFO (property, hub)", s(10), |_| fifo_property());
    suite.check("per-sensor FIFO (relay sockets)", s(10), fifo_relay);
    suite.check("determinism regression", None, |_| determinism());
    suite.check("error envelope (in-process)", s(60), |_| envelope());
    suite.check("error envelope (relay)", s(60), envelope_relay);

    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", suite.failed.len(), suite.failed.join(", "));
        std::process::exit(1);
    }
}
