//! Inputs shared by the benchmarks.

use geoar_core::geodesy::GeoPoint;
use geoar_core::protocol::Envelope;
use geoar_core::sim::{FixQuality, SensorKind, SensorMessage};

pub fn reference() -> GeoPoint {
    GeoPoint::new(49.5, 6.36).expect("valid")
}

pub fn message(seq: u64) -> SensorMessage {
    SensorMessage {
        sensor_id: "rtk-rover".into(),
        kind: SensorKind::Rtk,
        seq,
        timestamp_ms: seq * 100,
        position: GeoPoint::new(49.5003115, 6.360277).expect("valid"),
        fix_quality: FixQuality::Fixed,
    }
}

pub fn position_envelope(seq: u64) -> Envelope {
    let msg = message(seq);
    Envelope::position(&msg.sensor_id, seq, msg.timestamp_ms, geoar_core::kml::encode_kml(&msg))
}
