use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geodesy::{haversine_distance, intermediate_point, GeoPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub position: GeoPoint,
    /// Speed used when leaving this waypoint towards the next one.
    pub speed_mps: f64,
    #[serde(default)]
    pub pause_s: f64,
}

/// Drive/pause script: the vehicle waits `pause_s` at each waypoint, then
/// drives to the next one along the great circle at that waypoint's speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScript", into = "RawScript")]
pub struct TrajectoryScript {
    waypoints: Vec<Waypoint>,
    looped: bool,
    phases: Vec<Phase>,
    cycle_s: f64,
}

#[derive(Serialize, Deserialize)]
struct RawScript {
    waypoints: Vec<Waypoint>,
    #[serde(default, rename = "loop")]
    looped: bool,
}

impl TryFrom<RawScript> for TrajectoryScript {
    type Error = SimError;

    fn try_from(raw: RawScript) -> Result<Self, SimError> {
        TrajectoryScript::new(raw.waypoints, raw.looped)
    }
}

impl From<TrajectoryScript> for RawScript {
    fn from(s: TrajectoryScript) -> Self {
        RawScript {
            waypoints: s.waypoints,
            looped: s.looped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PhaseKind {
    Pause(usize),
    Travel { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Phase {
    start_s: f64,
    duration_s: f64,
    kind: PhaseKind,
}

/// Where the vehicle is at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub position: GeoPoint,
    pub paused: bool,
    /// Waypoint the vehicle is parked at, if any.
    pub waypoint: Option<usize>,
}

impl TrajectoryScript {
    pub fn new(waypoints: Vec<Waypoint>, looped: bool) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::InvalidConfig("trajectory needs at least one waypoint".into()));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.speed_mps.is_finite() && w.speed_mps > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "waypoint {i}: speed {} must be > 0",
                    w.speed_mps
                )));
            }
            if !(w.pause_s.is_finite() && w.pause_s >= 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "waypoint {i}: pause {} must be >= 0",
                    w.pause_s
                )));
            }
        }

        let n = waypoints.len();
        let mut phases = Vec::with_capacity(2 * n);
        let mut t = 0.0;
        let legs = if looped && n > 1 { n } else { n - 1 };
        for i in 0..n {
            if waypoints[i].pause_s > 0.0 {
                phases.push(Phase {
                    start_s: t,
                    duration_s: waypoints[i].pause_s,
                    kind: PhaseKind::Pause(i),
                });
                t += waypoints[i].pause_s;
            }
            if i < legs {
                let j = (i + 1) % n;
                let d = haversine_distance(&waypoints[i].position, &waypoints[j].position).meters();
                let duration = d / waypoints[i].speed_mps;
                if duration > 0.0 {
                    phases.push(Phase {
                        start_s: t,
                        duration_s: duration,
                        kind: PhaseKind::Travel { from: i, to: j },
                    });
                    t += duration;
                }
            }
        }
        Ok(TrajectoryScript {
            waypoints,
            looped,
            phases,
            cycle_s: t,
        })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    /// Label of waypoint `i`, defaulting to `L{i}`.
    pub fn label(&self, i: usize) -> String {
        self.waypoints[i]
            .label
            .clone()
            .unwrap_or_else(|| format!("L{i}"))
    }

    pub fn is_looped(&self) -> bool {
        self.looped
    }

    /// Length of one pass through the script, in seconds.
    pub fn duration_s(&self) -> f64 {
        self.cycle_s
    }

    /// Start and end time of every pause window in one pass, with the
    /// waypoint index it belongs to.
    pub fn pause_windows(&self) -> Vec<(usize, f64, f64)> {
        self.phases
            .iter()
            .filter_map(|p| match p.kind {
                PhaseKind::Pause(i) => Some((i, p.start_s, p.start_s + p.duration_s)),
                PhaseKind::Travel { .. } => None,
            })
            .collect()
    }

    pub fn state_at(&self, t: f64) -> TrajectoryState {
        step_trajectory(self, t)
    }
}

/// Position along the script at time `t` seconds. Times past the end clamp
/// to the final waypoint (parked) unless the script loops. Negative times
/// are treated as zero.
pub fn step_trajectory(script: &TrajectoryScript, t: f64) -> TrajectoryState {
    let last = script.waypoints.len() - 1;
    let parked = |i: usize| TrajectoryState {
        position: script.waypoints[i].position,
        paused: true,
        waypoint: Some(i),
    };
    if script.phases.is_empty() {
        // Zero-length script (one waypoint, or all waypoints coincident).
        return parked(if script.looped { 0 } else { last });
    }

    let mut t = t.max(0.0);
    if script.looped && script.cycle_s > 0.0 {
        t = t.rem_euclid(script.cycle_s);
    } else if t >= script.cycle_s {
        return parked(last);
    }

    // phases are sorted by start time; find the last one starting at or before t
    let idx = script.phases.partition_point(|p| p.start_s <= t).saturating_sub(1);
    let phase = script.phases[idx];
    match phase.kind {
        PhaseKind::Pause(i) => parked(i),
        PhaseKind::Travel { from, to } => {
            let f = (t - phase.start_s) / phase.duration_s;
            TrajectoryState {
                position: intermediate_point(
                    &script.waypoints[from].position,
                    &script.waypoints[to].position,
                    f,
                ),
                paused: false,
                waypoint: if f == 0.0 { Some(from) } else { None },
            }
        }
    }
}
