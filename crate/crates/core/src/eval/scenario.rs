use std::time::Duration;

use rand_chacha::ChaCha8Rng;

use super::{
    record_sample, summarize, CalibrationSource, ErrorSample, EvalError, EvalReport,
    OverlayLogRow, SamplingState, ScenarioConfig,
};
use crate::geodesy::{offset_by, tangent_plane_offset, GeoPoint, LocalPoint};
use crate::kml::{decode_kml, encode_kml};
use crate::protocol::Throttle;
use crate::sim::{
    sample_fix, seeded_rng, step_trajectory, survey_station, SensorKind, SensorMessage,
    SimulatedSensor, TrajectoryScript,
};
use crate::tracker::{vslam_step, CalibrationRecord, HmdPose, HmdTracker};

const SURVEY_STREAM: u64 = 0;
const SENSOR_STREAM_BASE: u64 = 1;
const VSLAM_STREAM: u64 = 100;

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: EvalReport,
    pub samples: Vec<ErrorSample>,
    pub overlay_log: Vec<OverlayLogRow>,
    pub calibration: CalibrationRecord,
    /// Surveyed base-station position.
    pub station_survey: GeoPoint,
}

struct Emitter {
    sensor: SimulatedSensor,
    interval_ms: Option<u64>,
    next_emit_ms: u64,
}

struct PlannedSample {
    tick: u64,
    label: String,
    parked_ms: u64,
}

/// Step-wise scenario execution. The in-process runner and the relay-backed
/// runner drive the same state machine; only the transport between
/// [`advance`](Self::advance) and [`ingest`](Self::ingest) differs.
pub struct ScenarioRunner {
    cfg: ScenarioConfig,
    emitters: Vec<Emitter>,
    tracker: HmdTracker,
    pose: HmdPose,
    wearer_start: GeoPoint,
    last_wearer_enu: LocalPoint,
    vslam_rng: ChaCha8Rng,
    tick: u64,
    last_tick: u64,
    plan: Vec<PlannedSample>,
    next_plan: usize,
    samples: Vec<ErrorSample>,
    overlay_log: Vec<OverlayLogRow>,
    station_survey: GeoPoint,
    calibration: CalibrationRecord,
}

fn wearer_at(vehicle: &GeoPoint, offset_m: f64) -> GeoPoint {
    if offset_m == 0.0 {
        *vehicle
    } else {
        offset_by(vehicle, &LocalPoint::new(offset_m, 0.0, 0.0))
    }
}

fn sample_plan(script: &TrajectoryScript, cfg: &ScenarioConfig, last_tick: u64) -> Vec<PlannedSample> {
    let mut plan = Vec::new();
    for (wp, start, end) in script.pause_windows() {
        if wp == 0 {
            continue;
        }
        let latest = (end - start - cfg.dt_s).max(0.0);
        let at = start + cfg.sample_delay_s.min(latest);
        let tick = (at / cfg.dt_s - 1e-9).ceil().max(0.0) as u64;
        if tick <= last_tick {
            plan.push(PlannedSample {
                tick,
                label: script.label(wp),
                parked_ms: ((start / cfg.dt_s - 1e-9).ceil().max(0.0) as u64) * cfg.dt_ms(),
            });
        }
    }
    plan.sort_by_key(|p| p.tick);
    plan
}

/// Surveys the base station from the seeded SPP stream and builds one
/// simulated sensor per configured sensor, RTK fixes carrying the survey
/// error. Shared by the scripted and the live simulators.
pub fn survey_and_sensors(cfg: &ScenarioConfig) -> Result<(GeoPoint, Vec<SimulatedSensor>), EvalError> {
    let mut survey_rng = seeded_rng(cfg.seed, SURVEY_STREAM);
    let station = cfg.station.position;
    let fixes: Vec<GeoPoint> = (0..cfg.survey_count)
        .map(|_| sample_fix(&station, &cfg.station.spp_noise, &mut survey_rng))
        .collect();
    let surveyed = survey_station(&fixes, cfg.survey_count)?;
    // corrections are relative to the surveyed base, so its error
    // reappears as a constant shift of every RTK fix
    let base_error = tangent_plane_offset(&station, &surveyed);
    let mut out = Vec::with_capacity(cfg.sensors.len());
    for (i, s) in cfg.sensors.iter().enumerate() {
        let mut sensor = SimulatedSensor::new(
            s.id.clone(),
            s.kind,
            s.noise.clone(),
            cfg.seed,
            SENSOR_STREAM_BASE + i as u64,
        )?;
        if s.kind == SensorKind::Rtk {
            sensor = sensor.with_shift(base_error);
        }
        out.push(sensor);
    }
    Ok((surveyed, out))
}

impl ScenarioRunner {
    /// Surveys the base station, builds the sensors and calibrates the
    /// display at t = 0.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, EvalError> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let seed = cfg.seed;

        let (surveyed, sensors) = survey_and_sensors(&cfg)?;
        let mut emitters: Vec<Emitter> = sensors
            .into_iter()
            .zip(&cfg.sensors)
            .map(|(sensor, s)| Emitter {
                sensor,
                interval_ms: s.interval_ms,
                next_emit_ms: 0,
            })
            .collect();

        let script = &cfg.trajectory;
        let start = step_trajectory(script, 0.0).position;
        let wearer_start = wearer_at(&start, cfg.hmd.colocation_offset_m);
        let pose = HmdPose::new(cfg.hmd.local_origin, cfg.hmd.frame_heading_deg);

        let world_ref = match cfg.calibration_source {
            CalibrationSource::Surveyed => start,
            CalibrationSource::Rtk => {
                let e = emitters
                    .iter_mut()
                    .find(|e| e.sensor.kind() == SensorKind::Rtk)
                    .expect("validated: an RTK sensor exists");
                e.sensor.measure(&start, 0).position
            }
        };
        let calibration = cfg
            .hmd
            .calibrator
            .calibrate(world_ref, &pose, cfg.hmd.colocation_offset_m)
            .map_err(EvalError::Calibration)?;
        let mut tracker = HmdTracker::new();
        tracker.set_calibration(calibration);

        let last_tick = (script.duration_s() / cfg.dt_s + 1e-9).floor() as u64;
        let plan = sample_plan(script, &cfg, last_tick);

        Ok(ScenarioRunner {
            emitters,
            tracker,
            pose,
            wearer_start,
            last_wearer_enu: LocalPoint::ORIGIN,
            vslam_rng: seeded_rng(seed, VSLAM_STREAM),
            tick: 0,
            last_tick,
            plan,
            next_plan: 0,
            samples: Vec::new(),
            overlay_log: Vec::new(),
            station_survey: surveyed,
            calibration,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn calibration(&self) -> &CalibrationRecord {
        &self.calibration
    }

    pub fn pose(&self) -> &HmdPose {
        &self.pose
    }

    /// Samples recorded so far.
    pub fn samples(&self) -> &[ErrorSample] {
        &self.samples
    }

    /// Scenario clock of the current step.
    pub fn now_ms(&self) -> u64 {
        self.tick * self.cfg.dt_ms()
    }

    pub fn is_finished(&self) -> bool {
        self.tick > self.last_tick
    }

    /// Moves the vehicle and the wearer to the current step and returns
    /// the position messages the sensors emit at this step.
    pub fn advance(&mut self) -> Result<Vec<SensorMessage>, EvalError> {
        let t = self.tick as f64 * self.cfg.dt_s;
        let now_ms = self.now_ms();
        let state = step_trajectory(&self.cfg.trajectory, t);

        let wearer = wearer_at(&state.position, self.cfg.hmd.colocation_offset_m);
        let enu = tangent_plane_offset(&self.wearer_start, &wearer);
        if self.tick > 0 {
            let motion = (enu - self.last_wearer_enu).into_heading_frame(self.pose.yaw_deg);
            self.pose = vslam_step(
                &self.pose,
                &motion,
                0.0,
                &self.cfg.hmd.drift,
                self.cfg.dt_s,
                &mut self.vslam_rng,
            )?;
        }
        self.last_wearer_enu = enu;

        let mut out = Vec::with_capacity(self.emitters.len());
        for e in &mut self.emitters {
            let due = match e.interval_ms {
                None => true,
                Some(iv) => {
                    if now_ms >= e.next_emit_ms {
                        e.next_emit_ms = now_ms + iv;
                        true
                    } else {
                        false
                    }
                }
            };
            if due {
                out.push(e.sensor.measure(&state.position, now_ms));
            }
        }
        Ok(out)
    }

    /// Feeds one delivered position into the display's tracker.
    pub fn ingest(&mut self, msg: &SensorMessage) -> Result<(), EvalError> {
        let now_ms = self.now_ms();
        let est = self.tracker.ingest(msg, now_ms)?;
        self.overlay_log.push(OverlayLogRow {
            timestamp_ms: now_ms,
            source_seq: est.source_seq,
            sensor_kind: est.sensor_kind,
            target_east: est.target_hmd.east_m,
            target_north: est.target_hmd.north_m,
            hmd_east: self.pose.position.east_m,
            hmd_north: self.pose.position.north_m,
        });
        Ok(())
    }

    /// Label of the stop sampled at the current step, if any.
    pub fn sample_due(&self) -> Option<&str> {
        self.plan
            .get(self.next_plan)
            .filter(|p| p.tick == self.tick)
            .map(|p| p.label.as_str())
    }

    /// Scenario time at which the vehicle parked for the sample due at the
    /// current step. A fix taken at or after it shows the parked vehicle.
    pub fn sample_parked_since_ms(&self) -> Option<u64> {
        self.plan
            .get(self.next_plan)
            .filter(|p| p.tick == self.tick)
            .map(|p| p.parked_ms)
    }

    /// Records one sample per sensor from its most recent overlay estimate
    /// when the current step is a sampling point, then ends the step.
    pub fn finish_step(&mut self) -> Result<Vec<ErrorSample>, EvalError> {
        let mut taken = Vec::new();
        while let Some(p) = self.plan.get(self.next_plan) {
            if p.tick > self.tick {
                break;
            }
            let label = p.label.clone();
            self.next_plan += 1;
            if p.tick < self.tick {
                continue;
            }
            let t = self.tick as f64 * self.cfg.dt_s;
            let state = if step_trajectory(&self.cfg.trajectory, t).paused {
                SamplingState::Paused
            } else {
                SamplingState::Moving
            };
            for e in &self.emitters {
                if let Some(est) = self.tracker.latest(e.sensor.id()) {
                    let s = record_sample(state, &self.pose.position, est, &label, self.now_ms())?;
                    taken.push(s);
                }
            }
        }
        self.samples.extend(taken.iter().cloned());
        self.tick += 1;
        Ok(taken)
    }

    pub fn finish(self) -> Result<ScenarioOutput, EvalError> {
        let mut report = summarize(&self.samples)?;
        report.seed = Some(self.cfg.seed);
        report.config_digest = Some(self.cfg.digest());
        Ok(ScenarioOutput {
            report,
            samples: self.samples,
            overlay_log: self.overlay_log,
            calibration: self.calibration,
            station_survey: self.station_survey,
        })
    }
}

/// Runs a scenario entirely in-process: every position is KML-encoded,
/// throttled on the scenario clock and decoded before it reaches the
/// tracker, as it would be through the relay.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, EvalError> {
    let mut runner = ScenarioRunner::new(cfg)?;
    let mut throttle = Throttle::new(cfg.throttle.clone());
    while !runner.is_finished() {
        let now = Duration::from_millis(runner.now_ms());
        for msg in runner.advance()? {
            let kml = encode_kml(&msg);
            if throttle.admit(&msg.sensor_id, now) {
                let delivered = decode_kml(&kml)?;
                runner.ingest(&delivered)?;
            }
        }
        runner.finish_step()?;
    }
    runner.finish()
}
