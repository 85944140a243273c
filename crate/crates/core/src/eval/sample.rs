use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geodesy::LocalPoint;
use crate::sim::SensorKind;
use crate::tracker::OverlayEstimate;

/// One co-location error measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub location_id: String,
    pub sensor_kind: SensorKind,
    pub error_m: f64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingState {
    /// Vehicle parked and the wearer standing at it.
    Paused,
    Moving,
}

/// Planar distance between the display's own position and the overlay.
/// Heights are ignored.
pub fn record_sample(
    state: SamplingState,
    hmd_pos: &LocalPoint,
    overlay: &OverlayEstimate,
    location_id: &str,
    timestamp_ms: u64,
) -> Result<ErrorSample, EvalError> {
    if state != SamplingState::Paused {
        return Err(EvalError::NotPaused);
    }
    Ok(ErrorSample {
        location_id: location_id.to_owned(),
        sensor_kind: overlay.sensor_kind,
        error_m: hmd_pos.horizontal_distance(&overlay.target_hmd),
        timestamp_ms,
    })
}
