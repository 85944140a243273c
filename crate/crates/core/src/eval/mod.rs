//! Drive/pause ("semi-dynamic") evaluation: the vehicle is driven and parked
//! at a series of locations; at each stop the wearer stands at the vehicle
//! and the planar distance between the display's own position and the
//! overlay is recorded for every sensor.

mod compare;
mod config;
mod csvio;
mod report;
mod sample;
mod scenario;

pub use compare::{compare_samples, CompareReport, SampleDiff};
pub use config::{
    CalibrationSource, HmdConfig, ScenarioConfig, SensorConfig, StationConfig,
    DEFAULT_SCENARIO_TOML,
};
pub use csvio::{
    read_samples_csv, samples_csv_row, samples_to_csv, summary_to_csv, write_overlay_csv,
    OverlayLogRow, OVERLAY_CSV_HEADER, SAMPLES_CSV_HEADER, SUMMARY_CSV_HEADER,
};
pub use report::{
    fixture_samples, replay_fixture, summarize, EvalReport, KindStats, LocationRow, FIXTURE_GPS_ERRORS_M,
    FIXTURE_RTK_ERRORS_M,
};
pub use sample::{record_sample, ErrorSample, SamplingState};
pub use scenario::{run_scenario, survey_and_sensors, ScenarioOutput, ScenarioRunner};

use thiserror::Error;

use crate::geodesy::GeoError;
use crate::kml::KmlError;
use crate::sim::{SensorKind, SimError};
use crate::tracker::TrackerError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sampling requires the vehicle to be paused")]
    NotPaused,
    #[error("insufficient data: {kind} has {count} samples, need at least 2")]
    InsufficientData { kind: SensorKind, count: usize },
    #[error("no samples")]
    NoSamples,
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("calibration failed: {0}")]
    Calibration(TrackerError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Kml(#[from] KmlError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
