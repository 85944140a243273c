use std::time::Duration;

use geoar_core::eval::{read_samples_csv, ScenarioConfig, SAMPLES_CSV_HEADER};
use geoar_core::geodesy::{geo_to_local, GeoPoint};
use geoar_core::protocol::{Command, Envelope, MsgType, Role, ThrottlePolicy};
use geoar_relay::live::{run_live, LiveOptions};
use geoar_relay::{RelayClient, RelayConfig, RelayServer};

const WAIT: Duration = Duration::from_secs(5);

struct Console {
    client: RelayClient,
    seq: u64,
}

impl Console {
    async fn command(&mut self, cmd: Command) {
        self.seq += 1;
        self.client.send(&Envelope::command(self.seq, 0, &cmd)).await.unwrap();
    }

    /// Next RTK fix seen by the console.
    async fn next_fix(&mut self) -> (u64, GeoPoint) {
        loop {
            let env = self.client.recv_timeout(WAIT).await.unwrap().expect("traffic");
            if env.msg_type == MsgType::Position && env.sensor_id.as_deref() == Some("rtk-rover") {
                let m = env.decode_position().unwrap();
                return (m.timestamp_ms, m.position);
            }
        }
    }

    async fn next(&mut self, t: MsgType) -> Envelope {
        loop {
            let env = self.client.recv_timeout(WAIT).await.unwrap().expect("traffic");
            if env.msg_type == t {
                return env;
            }
        }
    }
}

#[tokio::test]
async fn console_drives_calibrates_and_marks() {
    let cfg = ScenarioConfig::ideal();
    let server = RelayServer::start(RelayConfig {
        throttle: ThrottlePolicy::uniform(0),
        ..RelayConfig::ephemeral()
    })
    .await
    .unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let addr = server.tcp_addr();
    let live_cfg = cfg.clone();
    let live = tokio::spawn(async move {
        let opts = LiveOptions {
            step_period: Duration::from_millis(2),
        };
        run_live(&live_cfg, addr, &opts, async {
            let _ = stopped.await;
        })
        .await
    });
    let mut console = Console {
        client: RelayClient::connect(addr, Role::Console).await.unwrap(),
        seq: 0,
    };
    let (_, start) = console.next_fix().await;

    console.command(Command::Calibrate).await;
    console
        .command(Command::Drive {
            heading_deg: 0.0,
            speed_mps: 1.0,
        })
        .await;
    // wait until it moves, then check 1 m/s due north between fixes
    let (mut t_prev, mut prev) = console.next_fix().await;
    loop {
        let (t, p) = console.next_fix().await;
        let d = geo_to_local(&prev, &p).unwrap();
        if d.north_m > 0.0 {
            assert!((d.north_m - 0.1 * (t - t_prev) as f64 / 100.0).abs() < 1e-6, "{d:?}");
            assert!(d.east_m.abs() < 1e-6);
            break;
        }
        (t_prev, prev) = (t, p);
    }
    loop {
        let (_, p) = console.next_fix().await;
        if geo_to_local(&start, &p).unwrap().north_m > 5.0 {
            break;
        }
    }
    console.command(Command::Pause).await;
    let mut prev = console.next_fix().await.1;
    loop {
        let p = console.next_fix().await.1;
        if p == prev {
            break;
        }
        prev = p;
    }

    console.command(Command::MarkSample { label: "L1".into() }).await;
    let mark = console.next(MsgType::SampleMark).await;
    assert_eq!(mark.role, Role::Server);
    let result = console.next(MsgType::Metrics).await;
    assert_eq!(result.role, Role::Hmd);
    let csv = format!("{SAMPLES_CSV_HEADER}\n{}\n", result.payload);
    let samples = read_samples_csv(csv.as_bytes()).unwrap();
    assert_eq!(samples.len(), 2);
    for s in &samples {
        assert_eq!(s.location_id, "L1");
        assert!(s.error_m < 1e-6, "{s:?}");
    }

    stop.send(()).unwrap();
    let summary = live.await.unwrap().unwrap();
    assert_eq!(summary.samples, samples);
}
