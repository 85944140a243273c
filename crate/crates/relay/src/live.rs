//! Live participants for an operator-driven session: a vehicle that follows
//! console COMMANDs and publishes its sensors' fixes, and a display client
//! that calibrates on `calibrate` and answers each SAMPLE_MARK with the
//! sample rows for that stop.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use geoar_core::eval::{
    record_sample, samples_csv_row, survey_and_sensors, CalibrationSource, ErrorSample, EvalError,
    SamplingState, ScenarioConfig,
};
use geoar_core::geodesy::{offset_by, tangent_plane_offset, GeoPoint, LocalPoint};
use geoar_core::kml::encode_kml;
use geoar_core::protocol::{Command, Envelope, MsgType, Role, SampleMark};
use geoar_core::sim::{seeded_rng, step_trajectory, LiveRover, SensorKind, SimulatedSensor};
use geoar_core::tracker::{vslam_step, HmdPose, HmdTracker};
use rand_chacha::ChaCha8Rng;
use tokio::time::MissedTickBehavior;

use crate::client::{ClientError, RelayClient, RelayReader, RelayWriter};
use crate::e2e::E2eError;

const LIVE_VSLAM_STREAM: u64 = 100;

#[derive(Debug, Clone)]
pub struct LiveOptions {
    /// Wall-clock time per simulation step (the step itself is `dt_s`).
    pub step_period: Duration,
}

impl LiveOptions {
    pub fn real_time(cfg: &ScenarioConfig) -> Self {
        LiveOptions {
            step_period: Duration::from_secs_f64(cfg.dt_s),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LiveSummary {
    pub steps: u64,
    pub samples: Vec<ErrorSample>,
}

struct Vehicle {
    rover: LiveRover,
    sensors: Vec<(SimulatedSensor, RelayWriter)>,
    command_rx: RelayReader,
    other_rx: Vec<RelayReader>,
}

struct Display {
    rx: RelayReader,
    tx: RelayWriter,
    tracker: HmdTracker,
    pose: HmdPose,
    rng: ChaCha8Rng,
    wearer_start: GeoPoint,
    last_enu: LocalPoint,
    last_rtk: Option<GeoPoint>,
    sent: u64,
}

fn wearer_at(vehicle: &GeoPoint, offset_m: f64) -> GeoPoint {
    if offset_m == 0.0 {
        *vehicle
    } else {
        offset_by(vehicle, &LocalPoint::new(offset_m, 0.0, 0.0))
    }
}

/// Runs the live vehicle and display against the relay at `addr` until
/// `shutdown` resolves or the relay closes a session. The vehicle starts
/// parked at the first waypoint of `cfg`'s trajectory; the rest of the
/// script is ignored.
pub async fn run_live(
    cfg: &ScenarioConfig,
    addr: SocketAddr,
    opts: &LiveOptions,
    shutdown: impl Future<Output = ()>,
) -> Result<LiveSummary, E2eError> {
    cfg.validate()?;
    let start = step_trajectory(&cfg.trajectory, 0.0).position;
    let (_, sims) = survey_and_sensors(cfg)?;

    let mut sensors = Vec::with_capacity(sims.len());
    let mut readers = Vec::with_capacity(sims.len());
    for sim in sims {
        let (r, w) = RelayClient::connect_sensor(addr, sim.id()).await?.split();
        readers.push(r);
        sensors.push((sim, w));
    }
    let command_rx = readers.remove(0);
    let mut vehicle = Vehicle {
        rover: LiveRover::new(start),
        sensors,
        command_rx,
        other_rx: readers,
    };

    let (rx, tx) = RelayClient::connect(addr, Role::Hmd).await?.split();
    let mut display = Display {
        rx,
        tx,
        tracker: HmdTracker::new(),
        pose: HmdPose::new(cfg.hmd.local_origin, cfg.hmd.frame_heading_deg),
        rng: seeded_rng(cfg.seed, LIVE_VSLAM_STREAM),
        wearer_start: wearer_at(&start, cfg.hmd.colocation_offset_m),
        last_enu: LocalPoint::ORIGIN,
        last_rtk: None,
        sent: 0,
    };

    let mut summary = LiveSummary::default();
    let mut pace = tokio::time::interval(opts.step_period.max(Duration::from_micros(1)));
    pace.set_missed_tick_behavior(MissedTickBehavior::Delay);
    tokio::pin!(shutdown);

    let result = loop {
        tokio::select! {
            _ = &mut shutdown => break Ok(()),
            _ = pace.tick() => {
                if let Err(e) = vehicle.step(cfg, summary.steps, &mut display).await {
                    break Err(e);
                }
                summary.steps += 1;
            }
            env = vehicle.command_rx.recv() => match env {
                Ok(env) => vehicle.command(&env),
                Err(e) => break Err(e.into()),
            },
            env = display.rx.recv() => match env {
                Ok(env) => {
                    let now_ms = summary.steps * cfg.dt_ms();
                    match display.handle(cfg, &vehicle, &env, now_ms).await {
                        Ok(taken) => summary.samples.extend(taken),
                        Err(e) => break Err(e),
                    }
                }
                Err(e) => break Err(e.into()),
            },
        }
    };
    match result {
        Ok(()) | Err(E2eError::Client(ClientError::Closed)) => Ok(summary),
        Err(e) => Err(e),
    }
}

impl Vehicle {
    fn command(&mut self, env: &Envelope) {
        if env.msg_type != MsgType::Command {
            return;
        }
        match Command::parse(&env.payload) {
            Ok(cmd) => {
                if let Some(drive) = cmd.as_drive() {
                    if let Err(e) = self.rover.command(drive) {
                        tracing::warn!("ignoring command: {e}");
                    }
                }
            }
            Err(e) => tracing::warn!("ignoring command: {e}"),
        }
    }

    async fn step(&mut self, cfg: &ScenarioConfig, tick: u64, display: &mut Display) -> Result<(), E2eError> {
        let state = self.rover.step(if tick == 0 { 0.0 } else { cfg.dt_s });
        display.follow(cfg, &state.position, tick)?;
        let now_ms = tick * cfg.dt_ms();
        for (sim, tx) in &mut self.sensors {
            let msg = sim.measure(&state.position, now_ms);
            tx.send(&Envelope::position(&msg.sensor_id, msg.seq, now_ms, encode_kml(&msg)))
                .await?;
        }
        for rx in &mut self.other_rx {
            while rx.try_recv()?.is_some() {}
        }
        Ok(())
    }
}

impl Display {
    /// Moves the wearer along with the vehicle.
    fn follow(&mut self, cfg: &ScenarioConfig, vehicle: &GeoPoint, tick: u64) -> Result<(), E2eError> {
        let enu = tangent_plane_offset(&self.wearer_start, &wearer_at(vehicle, cfg.hmd.colocation_offset_m));
        if tick > 0 {
            let motion = (enu - self.last_enu).into_heading_frame(self.pose.yaw_deg);
            self.pose = vslam_step(&self.pose, &motion, 0.0, &cfg.hmd.drift, cfg.dt_s, &mut self.rng)
                .map_err(EvalError::from)?;
        }
        self.last_enu = enu;
        Ok(())
    }

    async fn handle(
        &mut self,
        cfg: &ScenarioConfig,
        vehicle: &Vehicle,
        env: &Envelope,
        now_ms: u64,
    ) -> Result<Vec<ErrorSample>, E2eError> {
        match env.msg_type {
            MsgType::Position => {
                let msg = env.decode_position().map_err(ClientError::from)?;
                if msg.kind == SensorKind::Rtk {
                    self.last_rtk = Some(msg.position);
                }
                if self.tracker.calibration().is_some() {
                    self.tracker.ingest(&msg, now_ms).map_err(EvalError::from)?;
                }
            }
            MsgType::Command if matches!(Command::parse(&env.payload), Ok(Command::Calibrate)) => {
                let world_ref = match cfg.calibration_source {
                    CalibrationSource::Surveyed => Some(vehicle.rover.state().position),
                    CalibrationSource::Rtk => self.last_rtk,
                };
                let Some(world_ref) = world_ref else {
                    tracing::warn!("calibrate ignored: no RTK fix yet");
                    return Ok(Vec::new());
                };
                match cfg.hmd.calibrator.calibrate(world_ref, &self.pose, cfg.hmd.colocation_offset_m) {
                    Ok(c) => self.tracker.set_calibration(c),
                    Err(e) => tracing::warn!("calibration rejected: {e}"),
                }
            }
            MsgType::SampleMark => {
                let Ok(mark) = serde_json::from_str::<SampleMark>(&env.payload) else {
                    return Ok(Vec::new());
                };
                let state = if vehicle.rover.state().paused {
                    SamplingState::Paused
                } else {
                    SamplingState::Moving
                };
                let mut taken = Vec::new();
                for (sim, _) in &vehicle.sensors {
                    if let Some(est) = self.tracker.latest(sim.id()) {
                        match record_sample(state, &self.pose.position, est, &mark.label, now_ms) {
                            Ok(s) => taken.push(s),
                            Err(e) => {
                                tracing::warn!("mark {} ignored: {e}", mark.label);
                                return Ok(Vec::new());
                            }
                        }
                    }
                }
                if !taken.is_empty() {
                    let rows = taken.iter().map(samples_csv_row).collect::<Result<Vec<_>, _>>()?;
                    self.sent += 1;
                    let mut out = Envelope::hello(Role::Hmd);
                    out.msg_type = MsgType::Metrics;
                    out.seq = self.sent;
                    out.sent_ms = now_ms;
                    out.payload = rows.join("\n");
                    self.tx.send(&out).await?;
                }
                return Ok(taken);
            }
            _ => {}
        }
        Ok(Vec::new())
    }
}
