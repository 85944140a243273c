//! Seedable simulators for the vehicle trajectory, the RTK rover, the phone
//! GPS and the base-station survey.

mod noise;
mod rover;
mod sensor;
mod trajectory;

pub use noise::{sample_displacement, sample_fix, NoiseModel};
pub use rover::{DriveCommand, LiveRover, RoverState};
pub use sensor::{
    survey_station, FixQuality, SensorKind, SensorMessage, SimulatedSensor,
    DEFAULT_SURVEY_COUNT,
};
pub use trajectory::{step_trajectory, TrajectoryScript, TrajectoryState, Waypoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geodesy::GeoError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: need {needed} fixes, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Deterministic generator for one simulator instance. Each `stream` gives an
/// independent sequence for the same seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
