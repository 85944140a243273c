use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::geodesy::{GeoPoint, LocalPoint};
use crate::protocol::ThrottlePolicy;
use crate::sim::{NoiseModel, SensorKind, TrajectoryScript, DEFAULT_SURVEY_COUNT};
use crate::tracker::{Calibrator, DriftModel};

/// The built-in seven-stop scenario.
pub const DEFAULT_SCENARIO_TOML: &str = include_str!("../../scenarios/default.toml");

/// Which world position the calibration pairs with the display's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationSource {
    /// Known coordinates of the first waypoint (the marked reference point).
    #[default]
    Surveyed,
    /// The first RTK fix received at the reference point.
    Rtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub id: String,
    pub kind: SensorKind,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Emission period; defaults to one message per simulation step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub position: GeoPoint,
    /// Noise of the single-point fixes averaged by the station survey.
    #[serde(default)]
    pub spp_noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmdConfig {
    /// True compass heading of the display frame's north axis at calibration.
    pub frame_heading_deg: f64,
    /// Horizontal distance (meters, due east) between wearer and vehicle
    /// while calibrating and sampling.
    pub colocation_offset_m: f64,
    /// Display-frame position of the wearer at calibration.
    pub local_origin: LocalPoint,
    pub drift: DriftModel,
    pub calibrator: Calibrator,
}

impl Default for HmdConfig {
    fn default() -> Self {
        HmdConfig {
            frame_heading_deg: 0.0,
            colocation_offset_m: 0.0,
            local_origin: LocalPoint::ORIGIN,
            drift: DriftModel::default(),
            calibrator: Calibrator::default(),
        }
    }
}

fn default_dt() -> f64 {
    0.1
}

fn default_sample_delay() -> f64 {
    1.0
}

fn default_survey_count() -> usize {
    DEFAULT_SURVEY_COUNT
}

/// Everything needed to reproduce one run. Loaded from TOML (see
/// `scenarios/default.toml` for the key schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Time after a stop begins at which the error sample is taken (clamped
    /// to the last step of the stop).
    #[serde(default = "default_sample_delay")]
    pub sample_delay_s: f64,
    #[serde(default)]
    pub calibration_source: CalibrationSource,
    #[serde(default = "default_survey_count")]
    pub survey_count: usize,
    pub station: StationConfig,
    pub trajectory: TrajectoryScript,
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub hmd: HmdConfig,
    #[serde(default)]
    pub throttle: ThrottlePolicy,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_scenario() -> Self {
        Self::from_toml(DEFAULT_SCENARIO_TOML).expect("built-in scenario is valid")
    }

    /// The default scenario with every noise source and drift switched off.
    pub fn ideal() -> Self {
        let mut cfg = Self::default_scenario();
        cfg.make_ideal();
        cfg
    }

    pub fn make_ideal(&mut self) {
        self.station.spp_noise = NoiseModel::zero();
        for s in &mut self.sensors {
            s.noise = NoiseModel::zero();
        }
        self.hmd.drift = DriftModel::default();
        self.hmd.colocation_offset_m = 0.0;
        self.hmd.frame_heading_deg = 0.0;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if !(self.dt_s.is_finite() && self.dt_s >= 0.001) {
            return bad(format!("dt_s {} must be >= 0.001", self.dt_s));
        }
        if !(self.sample_delay_s.is_finite() && self.sample_delay_s >= 0.0) {
            return bad("sample_delay_s must be >= 0".into());
        }
        if self.survey_count == 0 {
            return bad("survey_count must be >= 1".into());
        }
        if self.sensors.is_empty() {
            return bad("at least one sensor is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.sensors {
            s.noise.validate()?;
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate sensor id {:?}", s.id));
            }
            if s.interval_ms == Some(0) {
                return bad(format!("sensor {:?}: interval_ms must be > 0", s.id));
            }
        }
        if self.calibration_source == CalibrationSource::Rtk
            && !self.sensors.iter().any(|s| s.kind == SensorKind::Rtk)
        {
            return bad("calibration_source = \"rtk\" needs an RTK sensor".into());
        }
        self.station.spp_noise.validate()?;
        self.hmd.drift.validate()?;
        if !(self.hmd.colocation_offset_m.is_finite() && self.hmd.colocation_offset_m >= 0.0) {
            return bad("hmd.colocation_offset_m must be >= 0".into());
        }
        if !self.hmd.local_origin.is_finite() || !self.hmd.frame_heading_deg.is_finite() {
            return bad("hmd pose must be finite".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config (hex).
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario config serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn dt_ms(&self) -> u64 {
        (self.dt_s * 1000.0).round() as u64
    }
}
