//! Simulated optical see-through display client.
//!
//! The display tracks its own pose in a local metric frame (a stand-in for
//! visual SLAM). A one-time calibration pairs the vehicle's world fix with
//! the display's local position while the wearer stands at the vehicle
//! facing north; afterwards every incoming fix is placed in the display frame
//! by laying the great-circle distance along the bearing from the reference
//! and adding the reference's local position.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{
    geo_to_local, normalize_degrees, overlay_position, signed_degrees, GeoError, GeoPoint,
    LocalPoint,
};
use crate::sim::{SensorKind, SensorMessage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error(
        "calibration rejected: co-location residual {colocation_m:.3} m (max {max_colocation_m} m), \
         yaw residual {yaw_residual_deg:.3} deg (max {max_yaw_deg} deg)"
    )]
    CalibrationRejected {
        colocation_m: f64,
        yaw_residual_deg: f64,
        max_colocation_m: f64,
        max_yaw_deg: f64,
    },
    #[error("not calibrated")]
    NotCalibrated,
    #[error("insufficient history: need 2 estimates, have {0}")]
    InsufficientHistory(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Display pose in its own tracking frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmdPose {
    pub position: LocalPoint,
    /// Compass heading of the frame's north axis, in `[0, 360)`.
    pub yaw_deg: f64,
}

impl HmdPose {
    pub fn new(position: LocalPoint, yaw_deg: f64) -> Self {
        HmdPose {
            position,
            yaw_deg: normalize_degrees(yaw_deg),
        }
    }
}

/// Saved world/display reference pair. Immutable once created.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationRecord {
    p_ref_world: GeoPoint,
    p_ref_hmd: LocalPoint,
    yaw_at_calibration_deg: f64,
}

impl CalibrationRecord {
    pub fn p_ref_world(&self) -> GeoPoint {
        self.p_ref_world
    }

    pub fn p_ref_hmd(&self) -> LocalPoint {
        self.p_ref_hmd
    }

    pub fn yaw_at_calibration_deg(&self) -> f64 {
        self.yaw_at_calibration_deg
    }
}

/// Acceptance limits for the calibration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calibrator {
    pub yaw_tolerance_deg: f64,
    pub colocation_tolerance_m: f64,
}

impl Default for Calibrator {
    fn default() -> Self {
        Calibrator {
            yaw_tolerance_deg: 0.5,
            colocation_tolerance_m: 0.05,
        }
    }
}

impl Calibrator {
    /// Pairs `rtk_fix` with the current display pose. `colocation_residual_m`
    /// is the measured horizontal distance between wearer and vehicle.
    pub fn calibrate(
        &self,
        rtk_fix: GeoPoint,
        pose: &HmdPose,
        colocation_residual_m: f64,
    ) -> Result<CalibrationRecord, TrackerError> {
        let yaw = normalize_degrees(pose.yaw_deg);
        let yaw_residual = signed_degrees(yaw);
        if !(colocation_residual_m.is_finite()
            && colocation_residual_m <= self.colocation_tolerance_m
            && yaw_residual.abs() <= self.yaw_tolerance_deg)
        {
            return Err(TrackerError::CalibrationRejected {
                colocation_m: colocation_residual_m,
                yaw_residual_deg: yaw_residual,
                max_colocation_m: self.colocation_tolerance_m,
                max_yaw_deg: self.yaw_tolerance_deg,
            });
        }
        if !pose.position.is_finite() {
            return Err(TrackerError::InvalidArgument("non-finite display position".into()));
        }
        Ok(CalibrationRecord {
            p_ref_world: rtk_fix,
            p_ref_hmd: pose.position,
            yaw_at_calibration_deg: yaw,
        })
    }
}

/// Calibration with the default tolerances.
pub fn calibrate(
    rtk_fix: GeoPoint,
    pose: &HmdPose,
    colocation_residual_m: f64,
) -> Result<CalibrationRecord, TrackerError> {
    Calibrator::default().calibrate(rtk_fix, pose, colocation_residual_m)
}

/// Position of a world fix in the display frame.
///
/// The ENU offset from the reference is rotated into the display frame by
/// the residual calibration yaw and added to the reference's local position.
/// With zero yaw this is exactly `p_ref_hmd + (δ·sin β, δ·cos β, 0)`.
pub fn overlay_target(calib: &CalibrationRecord, fix: &GeoPoint) -> Result<LocalPoint, TrackerError> {
    let enu = geo_to_local(&calib.p_ref_world, fix)?;
    let delta = if calib.yaw_at_calibration_deg == 0.0 {
        enu
    } else {
        enu.into_heading_frame(calib.yaw_at_calibration_deg)
    };
    Ok(overlay_position(&calib.p_ref_hmd, &delta))
}

/// Overlay estimate traceable to one position message (or one
/// extrapolation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayEstimate {
    pub target_hmd: LocalPoint,
    pub source_seq: u64,
    pub computed_ms: u64,
    pub sensor_id: String,
    pub sensor_kind: SensorKind,
}

pub fn update_overlay(
    calib: &CalibrationRecord,
    msg: &SensorMessage,
    computed_ms: u64,
) -> Result<OverlayEstimate, TrackerError> {
    Ok(OverlayEstimate {
        target_hmd: overlay_target(calib, &msg.position)?,
        source_seq: msg.seq,
        computed_ms,
        sensor_id: msg.sensor_id.clone(),
        sensor_kind: msg.kind,
    })
}

/// Imperfections of the local pose tracker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    pub random_walk_sigma_m_per_sqrt_s: f64,
    pub yaw_drift_deg_per_min: f64,
}

impl DriftModel {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.random_walk_sigma_m_per_sqrt_s) && ok(self.yaw_drift_deg_per_min) {
            Ok(())
        } else {
            Err(TrackerError::InvalidArgument(format!("invalid drift model {self:?}")))
        }
    }
}

/// Advances the tracked pose by a commanded motion (expressed in the
/// display frame) plus random-walk position noise and linear yaw drift.
/// Always draws two normal variates so runs with and without noise consume
/// the generator identically.
pub fn vslam_step<R: Rng + ?Sized>(
    pose: &HmdPose,
    motion: &LocalPoint,
    yaw_delta_deg: f64,
    drift: &DriftModel,
    dt_s: f64,
    rng: &mut R,
) -> Result<HmdPose, TrackerError> {
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(TrackerError::InvalidArgument(format!("dt {dt_s} must be > 0")));
    }
    let ze: f64 = rng.sample(StandardNormal);
    let zn: f64 = rng.sample(StandardNormal);
    let step = drift.random_walk_sigma_m_per_sqrt_s * dt_s.sqrt();
    let noise = LocalPoint::new(step * ze, step * zn, 0.0);
    Ok(HmdPose {
        position: pose.position + *motion + noise,
        yaw_deg: normalize_degrees(
            pose.yaw_deg + yaw_delta_deg + drift.yaw_drift_deg_per_min * dt_s / 60.0,
        ),
    })
}

/// Constant-velocity extrapolation from the two most recent estimates.
pub fn predictive_extrapolate(
    history: &[OverlayEstimate],
    horizon_ms: u64,
) -> Result<LocalPoint, TrackerError> {
    let n = history.len();
    if n < 2 {
        return Err(TrackerError::InsufficientHistory(n));
    }
    let (prev, last) = (&history[n - 2], &history[n - 1]);
    if horizon_ms == 0 || last.computed_ms <= prev.computed_ms {
        return Ok(last.target_hmd);
    }
    let span = (last.computed_ms - prev.computed_ms) as f64;
    let velocity = (last.target_hmd - prev.target_hmd).scaled(1.0 / span);
    Ok(last.target_hmd + velocity.scaled(horizon_ms as f64))
}

/// Per-sensor overlay state of a display client.
#[derive(Debug, Clone, Default)]
pub struct HmdTracker {
    calibration: Option<CalibrationRecord>,
    history: HashMap<String, VecDeque<OverlayEstimate>>,
    depth: usize,
}

impl HmdTracker {
    pub fn new() -> Self {
        HmdTracker {
            calibration: None,
            history: HashMap::new(),
            depth: 2,
        }
    }

    pub fn set_calibration(&mut self, calib: CalibrationRecord) {
        self.calibration = Some(calib);
        self.history.clear();
    }

    pub fn calibration(&self) -> Option<&CalibrationRecord> {
        self.calibration.as_ref()
    }

    pub fn ingest(&mut self, msg: &SensorMessage, now_ms: u64) -> Result<OverlayEstimate, TrackerError> {
        let calib = self.calibration.as_ref().ok_or(TrackerError::NotCalibrated)?;
        let est = update_overlay(calib, msg, now_ms)?;
        let h = self.history.entry(msg.sensor_id.clone()).or_default();
        h.push_back(est.clone());
        while h.len() > self.depth {
            h.pop_front();
        }
        Ok(est)
    }

    pub fn latest(&self, sensor_id: &str) -> Option<&OverlayEstimate> {
        self.history.get(sensor_id).and_then(|h| h.back())
    }

    pub fn extrapolate(&self, sensor_id: &str, horizon_ms: u64) -> Result<LocalPoint, TrackerError> {
        let h: Vec<OverlayEstimate> = self
            .history
            .get(sensor_id)
            .map(|h| h.iter().cloned().collect())
            .unwrap_or_default();
        predictive_extrapolate(&h, horizon_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::destination;
    use crate::sim::{seeded_rng, FixQuality};
    use approx::assert_abs_diff_eq;

    fn fix() -> GeoPoint {
        GeoPoint::new(49.5, 6.36).unwrap()
    }

    fn est(e: f64, n: f64, t: u64) -> OverlayEstimate {
        OverlayEstimate {
            target_hmd: LocalPoint::new(e, n, 0.0),
            source_seq: t,
            computed_ms: t,
            sensor_id: "rtk".into(),
            sensor_kind: SensorKind::Rtk,
        }
    }

    #[test]
    fn calibrate_at_origin() {
        let rec = calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.0), 0.0).unwrap();
        assert_eq!(rec.p_ref_world(), fix());
        assert_eq!(rec.p_ref_hmd(), LocalPoint::ORIGIN);
        assert_eq!(rec.yaw_at_calibration_deg(), 0.0);
    }

    #[test]
    fn calibrate_tolerances() {
        let rec = calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.4), 0.0).unwrap();
        assert_eq!(rec.yaw_at_calibration_deg(), 0.4);
        assert!(calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, -0.4), 0.0).is_ok());
        assert!(matches!(
            calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.0), 0.2),
            Err(TrackerError::CalibrationRejected { .. })
        ));
        assert!(matches!(
            calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.6), 0.0),
            Err(TrackerError::CalibrationRejected { .. })
        ));
    }

    #[test]
    fn overlay_examples() {
        let rec = calibrate(fix(), &HmdPose::new(LocalPoint::new(2.0, 3.0, 1.0), 0.0), 0.0).unwrap();
        assert_eq!(overlay_target(&rec, &fix()).unwrap(), rec.p_ref_hmd());

        let rec = calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.0), 0.0).unwrap();
        let north10 = destination(&fix(), 0.0, 10.0);
        let t = overlay_target(&rec, &north10).unwrap();
        assert_abs_diff_eq!(t.east_m, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.north_m, 10.0, epsilon = 1e-9);
        assert_eq!(t.up_m, 0.0);

        // a display frame whose north axis points east: true north lands on -east
        let rec = Calibrator { yaw_tolerance_deg: 180.0, ..Default::default() }
            .calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 90.0), 0.0)
            .unwrap();
        let t = overlay_target(&rec, &north10).unwrap();
        assert_abs_diff_eq!(t.east_m, -10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.north_m, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn vslam_step_examples() {
        let mut rng = seeded_rng(1, 0);
        let p = HmdPose::new(LocalPoint::ORIGIN, 0.0);
        let next = vslam_step(&p, &LocalPoint::new(1.0, 0.0, 0.0), 0.0, &DriftModel::default(), 1.0, &mut rng).unwrap();
        assert_eq!(next.position, LocalPoint::new(1.0, 0.0, 0.0));

        let drift = DriftModel { random_walk_sigma_m_per_sqrt_s: 0.0, yaw_drift_deg_per_min: 0.5 };
        let mut pose = p;
        for _ in 0..120 {
            pose = vslam_step(&pose, &LocalPoint::ORIGIN, 0.0, &drift, 1.0, &mut rng).unwrap();
        }
        assert_abs_diff_eq!(pose.yaw_deg, 1.0, epsilon = 1e-9);

        assert!(vslam_step(&p, &LocalPoint::ORIGIN, 0.0, &drift, 0.0, &mut rng).is_err());
    }

    #[test]
    fn extrapolation_examples() {
        let h = [est(0.0, 0.0, 0), est(1.0, 0.0, 1000)];
        assert_eq!(predictive_extrapolate(&h, 0).unwrap(), h[1].target_hmd);
        assert_eq!(predictive_extrapolate(&h, 500).unwrap(), LocalPoint::new(1.5, 0.0, 0.0));
        let still = [est(3.0, 4.0, 0), est(3.0, 4.0, 100)];
        assert_eq!(predictive_extrapolate(&still, 10_000).unwrap(), LocalPoint::new(3.0, 4.0, 0.0));
        assert_eq!(predictive_extrapolate(&h[..1], 10), Err(TrackerError::InsufficientHistory(1)));
    }

    #[test]
    fn tracker_requires_calibration_and_keeps_two() {
        let mut t = HmdTracker::new();
        let msg = SensorMessage {
            sensor_id: "rtk".into(),
            kind: SensorKind::Rtk,
            seq: 1,
            timestamp_ms: 0,
            position: fix(),
            fix_quality: FixQuality::Fixed,
        };
        assert_eq!(t.ingest(&msg, 0), Err(TrackerError::NotCalibrated));
        t.set_calibration(calibrate(fix(), &HmdPose::new(LocalPoint::ORIGIN, 0.0), 0.0).unwrap());
        let a = t.ingest(&msg, 0).unwrap();
        let b = t.ingest(&msg, 100).unwrap();
        assert_eq!(a.target_hmd, b.target_hmd);
        let m3 = SensorMessage { position: destination(&fix(), 90.0, 1.0), seq: 3, ..msg.clone() };
        t.ingest(&m3, 200).unwrap();
        assert_eq!(t.latest("rtk").unwrap().source_seq, 3);
        let p = t.extrapolate("rtk", 100).unwrap();
        assert_abs_diff_eq!(p.east_m, 2.0, epsilon = 1e-6);
    }
}
