use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_displacement, seeded_rng, NoiseModel, SimError};
use crate::geodesy::{mean_position, offset_by, GeoPoint, LocalPoint};

/// Number of single-point fixes averaged for the base-station survey.
pub const DEFAULT_SURVEY_COUNT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SensorKind {
    Rtk,
    Gps,
}

impl SensorKind {
    pub const ALL: [SensorKind; 2] = [SensorKind::Gps, SensorKind::Rtk];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Rtk => "RTK",
            SensorKind::Gps => "GPS",
        }
    }

    pub fn default_fix_quality(self) -> FixQuality {
        match self {
            SensorKind::Rtk => FixQuality::Fixed,
            SensorKind::Gps => FixQuality::Spp,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RTK" => Ok(SensorKind::Rtk),
            "GPS" => Ok(SensorKind::Gps),
            other => Err(format!("unknown sensor kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FixQuality {
    Fixed,
    Float,
    Spp,
}

impl FixQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            FixQuality::Fixed => "FIXED",
            FixQuality::Float => "FLOAT",
            FixQuality::Spp => "SPP",
        }
    }
}

impl fmt::Display for FixQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FixQuality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FIXED" => Ok(FixQuality::Fixed),
            "FLOAT" => Ok(FixQuality::Float),
            "SPP" => Ok(FixQuality::Spp),
            other => Err(format!("unknown fix quality {other:?}")),
        }
    }
}

/// One position report, as carried in a KML payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMessage {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub position: GeoPoint,
    pub fix_quality: FixQuality,
}

/// A position sensor riding on the vehicle. Owns its generator; sequence
/// numbers start at 1 and increase by one per message.
#[derive(Debug, Clone)]
pub struct SimulatedSensor {
    id: String,
    kind: SensorKind,
    model: NoiseModel,
    rng: ChaCha8Rng,
    next_seq: u64,
    last_timestamp_ms: u64,
    shift: LocalPoint,
}

impl SimulatedSensor {
    pub fn new(
        id: impl Into<String>,
        kind: SensorKind,
        model: NoiseModel,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SimError> {
        model.validate()?;
        Ok(SimulatedSensor {
            id: id.into(),
            kind,
            model,
            rng: seeded_rng(seed, stream),
            next_seq: 1,
            last_timestamp_ms: 0,
            shift: LocalPoint::ORIGIN,
        })
    }

    /// Adds a constant ENU displacement to every fix (for RTK: the error of
    /// the surveyed base-station position).
    pub fn with_shift(mut self, shift: LocalPoint) -> Self {
        self.shift = shift;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn measure(&mut self, truth: &GeoPoint, timestamp_ms: u64) -> SensorMessage {
        let d = self.shift + sample_displacement(&self.model, &mut self.rng);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.last_timestamp_ms = self.last_timestamp_ms.max(timestamp_ms);
        SensorMessage {
            sensor_id: self.id.clone(),
            kind: self.kind,
            seq,
            timestamp_ms: self.last_timestamp_ms,
            position: offset_by(truth, &d),
            fix_quality: self.kind.default_fix_quality(),
        }
    }
}

/// Surveyed base-station position: the mean of the last `n` fixes.
pub fn survey_station(fixes: &[GeoPoint], n: usize) -> Result<GeoPoint, SimError> {
    if n == 0 {
        return Err(SimError::InvalidConfig("survey count must be >= 1".into()));
    }
    if fixes.len() < n {
        return Err(SimError::InsufficientData {
            needed: n,
            available: fixes.len(),
        });
    }
    Ok(mean_position(&fixes[fixes.len() - n..])?)
}
