//! Relay wire protocol.
//!
//! Every message is one JSON object on its own line (or one text frame on
//! the browser socket):
//!
//! | field       | type            | notes                                          |
//! |-------------|-----------------|------------------------------------------------|
//! | `msg_type`  | string          | `HELLO`, `POSITION`, `COMMAND`, `SAMPLE_MARK`, `METRICS`, `ACK`, `NACK` |
//! | `role`      | string          | `sensor`, `hmd`, `console`, `server`           |
//! | `sensor_id` | string or null  | required on `POSITION`                         |
//! | `seq`       | unsigned int    | strictly increasing per sender and sensor id   |
//! | `sent_ms`   | unsigned int    | sender clock, milliseconds                     |
//! | `payload`   | string          | KML for `POSITION`, JSON command for `COMMAND` |
//!
//! `ACK` and `NACK` only ever come from the relay (`role = "server"`); a
//! `NACK` payload is a human-readable reason.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kml::{decode_kml, KmlError};
use crate::sim::{DriveCommand, SensorMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    Hello,
    Position,
    Command,
    SampleMark,
    Metrics,
    Ack,
    Nack,
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MsgType::Hello => "HELLO",
            MsgType::Position => "POSITION",
            MsgType::Command => "COMMAND",
            MsgType::SampleMark => "SAMPLE_MARK",
            MsgType::Metrics => "METRICS",
            MsgType::Ack => "ACK",
            MsgType::Nack => "NACK",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sensor,
    Hmd,
    Console,
    Server,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Sensor => "sensor",
            Role::Hmd => "hmd",
            Role::Console => "console",
            Role::Server => "server",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("{role} may not send {msg_type}")]
    NotAllowed { role: Role, msg_type: MsgType },
    #[error("POSITION envelope without sensor_id")]
    MissingSensorId,
    #[error("undecodable position payload: {0}")]
    Payload(#[from] KmlError),
    #[error("unknown command: {0}")]
    UnknownCommand(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_id: Option<String>,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub sent_ms: u64,
    #[serde(default)]
    pub payload: String,
}

impl Envelope {
    pub fn hello(role: Role) -> Self {
        Envelope {
            msg_type: MsgType::Hello,
            role,
            sensor_id: None,
            seq: 0,
            sent_ms: 0,
            payload: String::new(),
        }
    }

    pub fn position(sensor_id: impl Into<String>, seq: u64, sent_ms: u64, kml: String) -> Self {
        Envelope {
            msg_type: MsgType::Position,
            role: Role::Sensor,
            sensor_id: Some(sensor_id.into()),
            seq,
            sent_ms,
            payload: kml,
        }
    }

    pub fn command(seq: u64, sent_ms: u64, cmd: &Command) -> Self {
        Envelope {
            msg_type: MsgType::Command,
            role: Role::Console,
            sensor_id: None,
            seq,
            sent_ms,
            payload: cmd.to_payload(),
        }
    }

    pub fn server(msg_type: MsgType, seq: u64, sent_ms: u64, payload: impl Into<String>) -> Self {
        Envelope {
            msg_type,
            role: Role::Server,
            sensor_id: None,
            seq,
            sent_ms,
            payload: payload.into(),
        }
    }

    /// Serializes to a single line without the trailing newline. JSON string
    /// escaping keeps embedded newlines in the payload off the wire.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serialization is infallible")
    }

    pub fn from_line(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    /// Checks that a client in `role` may send this envelope.
    pub fn check_client(&self, role: Role) -> Result<(), ProtocolError> {
        let allowed = match role {
            Role::Sensor => matches!(self.msg_type, MsgType::Hello | MsgType::Position),
            Role::Console => matches!(
                self.msg_type,
                MsgType::Hello | MsgType::Command | MsgType::SampleMark
            ),
            // display clients publish per-location sample results
            Role::Hmd => matches!(self.msg_type, MsgType::Hello | MsgType::Metrics),
            Role::Server => false,
        };
        if !allowed || self.role != role {
            return Err(ProtocolError::NotAllowed {
                role,
                msg_type: self.msg_type,
            });
        }
        if self.msg_type == MsgType::Position && self.sensor_id.is_none() {
            return Err(ProtocolError::MissingSensorId);
        }
        Ok(())
    }

    pub fn decode_position(&self) -> Result<SensorMessage, ProtocolError> {
        Ok(decode_kml(&self.payload)?)
    }
}

/// Operator commands carried in `COMMAND` payloads, e.g.
/// `{"cmd":"drive","heading_deg":90.0,"speed_mps":1.0}` or
/// `{"cmd":"mark_sample","label":"L3"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Drive { heading_deg: f64, speed_mps: f64 },
    Pause,
    Resume,
    Calibrate,
    MarkSample { label: String },
}

impl Command {
    pub fn parse(payload: &str) -> Result<Self, ProtocolError> {
        let unknown = |e: String| ProtocolError::UnknownCommand(format!("{payload:?}: {e}"));
        let raw: serde_json::Value = serde_json::from_str(payload).map_err(|e| unknown(e.to_string()))?;
        let cmd: Command = serde_json::from_value(raw.clone()).map_err(|e| unknown(e.to_string()))?;
        // unit variants of a tagged enum ignore deny_unknown_fields
        let expected = serde_json::to_value(&cmd).expect("command serialization is infallible");
        if let (Some(got), Some(want)) = (raw.as_object(), expected.as_object()) {
            if let Some(k) = got.keys().find(|k| !want.contains_key(*k)) {
                return Err(unknown(format!("unexpected field `{k}`")));
            }
        }
        if let Command::Drive { heading_deg, speed_mps } = cmd {
            if !heading_deg.is_finite() || !speed_mps.is_finite() || speed_mps < 0.0 {
                return Err(ProtocolError::UnknownCommand(format!(
                    "drive({heading_deg}, {speed_mps}) out of range"
                )));
            }
        }
        Ok(cmd)
    }

    pub fn to_payload(&self) -> String {
        serde_json::to_string(self).expect("command serialization is infallible")
    }

    pub fn as_drive(&self) -> Option<DriveCommand> {
        match *self {
            Command::Drive { heading_deg, speed_mps } => {
                Some(DriveCommand::Drive { heading_deg, speed_mps })
            }
            Command::Pause => Some(DriveCommand::Pause),
            Command::Resume => Some(DriveCommand::Resume),
            Command::Calibrate | Command::MarkSample { .. } => None,
        }
    }
}

/// Payload of a `SAMPLE_MARK` envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMark {
    pub label: String,
}

/// Minimum spacing between accepted positions, per sensor id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrottlePolicy {
    pub min_interval_ms: u64,
    pub per_sensor_ms: BTreeMap<String, u64>,
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        ThrottlePolicy::uniform(ThrottlePolicy::DEFAULT_MIN_INTERVAL_MS)
    }
}

impl ThrottlePolicy {
    pub const DEFAULT_MIN_INTERVAL_MS: u64 = 100;

    pub fn uniform(min_interval_ms: u64) -> Self {
        ThrottlePolicy {
            min_interval_ms,
            per_sensor_ms: BTreeMap::new(),
        }
    }

    pub fn interval_for(&self, sensor_id: &str) -> Duration {
        let ms = self
            .per_sensor_ms
            .get(sensor_id)
            .copied()
            .unwrap_or(self.min_interval_ms);
        Duration::from_millis(ms)
    }
}

/// Drop-based rate limiter: a position is accepted iff at least the
/// sensor's minimum interval has passed since its last accepted position.
/// Over-rate positions are dropped, never queued.
#[derive(Debug, Clone, Default)]
pub struct Throttle {
    policy: ThrottlePolicy,
    last_accepted: HashMap<String, Duration>,
}

impl Throttle {
    pub fn new(policy: ThrottlePolicy) -> Self {
        Throttle {
            policy,
            last_accepted: HashMap::new(),
        }
    }

    pub fn policy(&self) -> &ThrottlePolicy {
        &self.policy
    }

    /// `now` is read from a monotone clock.
    pub fn admit(&mut self, sensor_id: &str, now: Duration) -> bool {
        let interval = self.policy.interval_for(sensor_id);
        match self.last_accepted.get_mut(sensor_id) {
            Some(last) => {
                if now >= *last && now - *last >= interval {
                    *last = now;
                    true
                } else {
                    false
                }
            }
            None => {
                self.last_accepted.insert(sensor_id.to_owned(), now);
                true
            }
        }
    }
}
