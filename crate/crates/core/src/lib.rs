//! Core algorithms for overlaying RTK-tracked vehicle positions on a
//! head-mounted display: spherical geodesy, seedable sensor simulation,
//! KML position messages, the relay envelope protocol, the display-side
//! overlay tracker and the drive/pause evaluation harness.

pub mod eval;
pub mod geodesy;
pub mod kml;
pub mod protocol;
pub mod sim;
pub mod tracker;

pub use geodesy::{
    destination, geo_to_local, haversine_distance, initial_bearing, BearingAngle,
    DistanceMeters, GeoError, GeoPoint, LocalPoint, EARTH_RADIUS_M,
};
pub use kml::{decode_kml, encode_kml, KmlError};
pub use protocol::{Command, Envelope, MsgType, ProtocolError, Role, Throttle, ThrottlePolicy};
pub use sim::{NoiseModel, SensorKind, SensorMessage};
pub use tracker::{CalibrationRecord, HmdPose, HmdTracker, OverlayEstimate, TrackerError};
