//! KML position messages.
//!
//! Each message is a KML document with a single `Placemark` holding a
//! `Point` (coordinates in KML `lon,lat,alt` order) and `ExtendedData`
//! entries for the sensor metadata:
//!
//! ```xml
//! <?xml version="1.0" encoding="UTF-8"?>
//! <kml xmlns="http://www.opengis.net/kml/2.2">
//! <Placemark>
//! <name>rtk-1</name>
//! <ExtendedData>
//! <Data name="sensor_id"><value>rtk-1</value></Data>
//! <Data name="kind"><value>RTK</value></Data>
//! <Data name="seq"><value>42</value></Data>
//! <Data name="timestamp_ms"><value>4200</value></Data>
//! <Data name="fix_quality"><value>FIXED</value></Data>
//! </ExtendedData>
//! <Point><coordinates>6.36,49.5,0</coordinates></Point>
//! </Placemark>
//! </kml>
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! decoding an encoded message returns it unchanged.

use std::fmt::Write as _;

use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};
use thiserror::Error;

use crate::geodesy::GeoPoint;
use crate::sim::{FixQuality, SensorKind, SensorMessage};

pub const KML_NAMESPACE: &str = "http://www.opengis.net/kml/2.2";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmlError {
    #[error("malformed KML: {0}")]
    Malformed(String),
    #[error("missing <{0}> element")]
    Missing(String),
    #[error("invalid <{element}>: {reason}")]
    Invalid { element: String, reason: String },
}

pub fn encode_kml(msg: &SensorMessage) -> String {
    let mut out = String::with_capacity(512);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<kml xmlns=\"{KML_NAMESPACE}\">");
    out.push_str("<Placemark>\n");
    let id = escape(msg.sensor_id.as_str());
    let _ = writeln!(out, "<name>{id}</name>");
    out.push_str("<ExtendedData>\n");
    let data = [
        ("sensor_id", id.to_string()),
        ("kind", msg.kind.to_string()),
        ("seq", msg.seq.to_string()),
        ("timestamp_ms", msg.timestamp_ms.to_string()),
        ("fix_quality", msg.fix_quality.to_string()),
    ];
    for (name, value) in data {
        let _ = writeln!(out, "<Data name=\"{name}\"><value>{value}</value></Data>");
    }
    out.push_str("</ExtendedData>\n");
    let p = &msg.position;
    let _ = writeln!(
        out,
        "<Point><coordinates>{},{},{}</coordinates></Point>",
        p.longitude_deg(),
        p.latitude_deg(),
        p.altitude_m()
    );
    out.push_str("</Placemark>\n</kml>\n");
    out
}

#[derive(Default)]
struct Fields {
    sensor_id: Option<String>,
    kind: Option<String>,
    seq: Option<String>,
    timestamp_ms: Option<String>,
    fix_quality: Option<String>,
    coordinates: Option<String>,
    saw_kml: bool,
    saw_placemark: bool,
    saw_point: bool,
}

enum Capture {
    None,
    Data(String),
    Coordinates,
}

pub fn decode_kml(text: &str) -> Result<SensorMessage, KmlError> {
    let mut reader = Reader::from_str(text);
    let mut f = Fields::default();
    let mut stack: Vec<String> = Vec::new();
    let mut data_name: Option<String> = None;
    let mut capture = Capture::None;
    let mut buf = String::new();

    loop {
        let ev = reader
            .read_event()
            .map_err(|e| KmlError::Malformed(format!("at byte {}: {e}", reader.error_position())))?;
        match ev {
            Event::Start(e) => {
                let name = AsRef::<str>::as_ref(&e.local_name()).to_owned();
                match name.as_str() {
                    "kml" => f.saw_kml = true,
                    "Placemark" => {
                        if f.saw_placemark {
                            return Err(KmlError::Invalid {
                                element: "Placemark".into(),
                                reason: "more than one Placemark".into(),
                            });
                        }
                        f.saw_placemark = true;
                    }
                    "Point" => f.saw_point = true,
                    "Data" => {
                        let attr = e
                            .try_get_attribute("name")
                            .map_err(|err| KmlError::Malformed(err.to_string()))?
                            .ok_or_else(|| KmlError::Invalid {
                                element: "Data".into(),
                                reason: "missing name attribute".into(),
                            })?;
                        let v = attr
                            .normalized_value(XmlVersion::Implicit1_0)
                            .map_err(|err| KmlError::Malformed(err.to_string()))?;
                        data_name = Some(v.into_owned());
                    }
                    "value" if stack.last().map(String::as_str) == Some("Data") => {
                        capture = Capture::Data(data_name.clone().unwrap_or_default());
                        buf.clear();
                    }
                    "coordinates" if stack.last().map(String::as_str) == Some("Point") => {
                        capture = Capture::Coordinates;
                        buf.clear();
                    }
                    _ => {}
                }
                stack.push(name);
            }
            Event::Empty(e) => {
                let name = AsRef::<str>::as_ref(&e.local_name()).to_owned();
                if name == "coordinates" || name == "Point" {
                    return Err(KmlError::Invalid {
                        element: name,
                        reason: "empty element".into(),
                    });
                }
            }
            Event::Text(t) => {
                if !matches!(capture, Capture::None) {
                    buf.push_str(&t.xml10_content());
                }
            }
            Event::CData(t) => {
                if !matches!(capture, Capture::None) {
                    buf.push_str(&t);
                }
            }
            Event::GeneralRef(r) => {
                if !matches!(capture, Capture::None) {
                    let resolved = r
                        .resolve_char_ref()
                        .map_err(|err| KmlError::Malformed(err.to_string()))?;
                    match resolved {
                        Some(c) => buf.push(c),
                        None => {
                            let ent = resolve_predefined_entity(&r).ok_or_else(|| {
                                KmlError::Malformed(format!("unknown entity &{};", &*r))
                            })?;
                            buf.push_str(ent);
                        }
                    }
                }
            }
            Event::End(e) => {
                let name = AsRef::<str>::as_ref(&e.local_name()).to_owned();
                stack.pop();
                match (name.as_str(), &capture) {
                    ("value", Capture::Data(key)) => {
                        let value = std::mem::take(&mut buf);
                        let slot = match key.as_str() {
                            "sensor_id" => Some(&mut f.sensor_id),
                            "kind" => Some(&mut f.kind),
                            "seq" => Some(&mut f.seq),
                            "timestamp_ms" => Some(&mut f.timestamp_ms),
                            "fix_quality" => Some(&mut f.fix_quality),
                            _ => None,
                        };
                        if let Some(slot) = slot {
                            *slot = Some(value);
                        }
                        capture = Capture::None;
                    }
                    ("coordinates", Capture::Coordinates) => {
                        f.coordinates = Some(std::mem::take(&mut buf));
                        capture = Capture::None;
                    }
                    ("Data", _) => data_name = None,
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(KmlError::Malformed(format!("unclosed <{}>", stack.join("><"))));
    }
    if !f.saw_kml {
        return Err(KmlError::Missing("kml".into()));
    }
    if !f.saw_placemark {
        return Err(KmlError::Missing("Placemark".into()));
    }
    if !f.saw_point {
        return Err(KmlError::Missing("Point".into()));
    }

    let coords = f.coordinates.ok_or_else(|| KmlError::Missing("coordinates".into()))?;
    let position = parse_coordinates(&coords)?;

    let field = |v: Option<String>, name: &str| {
        v.ok_or_else(|| KmlError::Missing(format!("Data name=\"{name}\"")))
    };
    let invalid = |name: &str, reason: String| KmlError::Invalid {
        element: format!("Data name=\"{name}\""),
        reason,
    };
    let sensor_id = field(f.sensor_id, "sensor_id")?;
    let kind = field(f.kind, "kind")?
        .trim()
        .parse::<SensorKind>()
        .map_err(|e| invalid("kind", e))?;
    let seq = field(f.seq, "seq")?
        .trim()
        .parse::<u64>()
        .map_err(|e| invalid("seq", e.to_string()))?;
    let timestamp_ms = field(f.timestamp_ms, "timestamp_ms")?
        .trim()
        .parse::<u64>()
        .map_err(|e| invalid("timestamp_ms", e.to_string()))?;
    let fix_quality = field(f.fix_quality, "fix_quality")?
        .trim()
        .parse::<FixQuality>()
        .map_err(|e| invalid("fix_quality", e))?;

    Ok(SensorMessage {
        sensor_id,
        kind,
        seq,
        timestamp_ms,
        position,
        fix_quality,
    })
}

fn parse_coordinates(text: &str) -> Result<GeoPoint, KmlError> {
    let invalid = |reason: String| KmlError::Invalid {
        element: "coordinates".into(),
        reason,
    };
    let parts: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(invalid(format!("expected lon,lat[,alt], got {text:?}")));
    }
    let num = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|e| invalid(format!("{what} {s:?}: {e}")))
    };
    let lon = num(parts[0], "longitude")?;
    let lat = num(parts[1], "latitude")?;
    let alt = match parts.get(2) {
        Some(s) => num(s, "altitude")?,
        None => 0.0,
    };
    if !(-180.0..=180.0).contains(&lon) {
        return Err(invalid(format!("longitude {lon} out of range")));
    }
    GeoPoint::with_altitude(lat, lon, alt).map_err(|e| invalid(e.to_string()))
}
