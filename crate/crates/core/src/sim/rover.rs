use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geodesy::{destination, normalize_degrees, GeoPoint};

/// Motion commands the operator can send to the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriveCommand {
    /// Head along `heading_deg` (clockwise from north) at `speed_mps`.
    /// Also releases a pause.
    Drive { heading_deg: f64, speed_mps: f64 },
    Pause,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoverState {
    pub position: GeoPoint,
    pub heading_deg: f64,
    pub speed_mps: f64,
    pub paused: bool,
}

/// A vehicle driven live by operator commands. Commands are queued and take
/// effect at the start of the next [`LiveRover::step`].
#[derive(Debug, Clone)]
pub struct LiveRover {
    state: RoverState,
    pending: VecDeque<DriveCommand>,
}

impl LiveRover {
    /// A parked, stopped rover at `start`, facing north.
    pub fn new(start: GeoPoint) -> Self {
        LiveRover {
            state: RoverState {
                position: start,
                heading_deg: 0.0,
                speed_mps: 0.0,
                paused: true,
            },
            pending: VecDeque::new(),
        }
    }

    pub fn state(&self) -> RoverState {
        self.state
    }

    pub fn command(&mut self, cmd: DriveCommand) -> Result<(), SimError> {
        if let DriveCommand::Drive { heading_deg, speed_mps } = cmd {
            if !heading_deg.is_finite() || !speed_mps.is_finite() || speed_mps < 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "drive({heading_deg}, {speed_mps}) is not a valid command"
                )));
            }
        }
        self.pending.push_back(cmd);
        Ok(())
    }

    pub fn step(&mut self, dt_s: f64) -> RoverState {
        while let Some(cmd) = self.pending.pop_front() {
            match cmd {
                DriveCommand::Drive { heading_deg, speed_mps } => {
                    self.state.heading_deg = normalize_degrees(heading_deg);
                    self.state.speed_mps = speed_mps;
                    self.state.paused = false;
                }
                DriveCommand::Pause => self.state.paused = true,
                DriveCommand::Resume => self.state.paused = false,
            }
        }
        if !self.state.paused && self.state.speed_mps > 0.0 && dt_s > 0.0 {
            self.state.position = destination(
                &self.state.position,
                self.state.heading_deg,
                self.state.speed_mps * dt_s,
            );
        }
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{geo_to_local, haversine_distance};

    fn start() -> GeoPoint {
        GeoPoint::new(49.5, 6.36).unwrap()
    }

    #[test]
    fn pause_applies_on_next_step() {
        let mut r = LiveRover::new(start());
        r.command(DriveCommand::Drive { heading_deg: 0.0, speed_mps: 1.0 }).unwrap();
        r.step(1.0);
        r.command(DriveCommand::Pause).unwrap();
        assert!(!r.state().paused);
        assert!(r.step(0.1).paused);
    }

    #[test]
    fn drive_north_at_one_meter_per_second() {
        let mut r = LiveRover::new(start());
        r.command(DriveCommand::Drive { heading_deg: 0.0, speed_mps: 1.0 }).unwrap();
        for _ in 0..100 {
            r.step(0.1);
        }
        let off = geo_to_local(&start(), &r.state().position).unwrap();
        assert!((off.north_m - 10.0).abs() < 1e-6);
        assert!(off.east_m.abs() < 1e-6);
        assert_eq!(r.state().heading_deg, 0.0);
        assert_eq!(r.state().speed_mps, 1.0);
    }

    #[test]
    fn paused_rover_holds_position() {
        let mut r = LiveRover::new(start());
        r.command(DriveCommand::Drive { heading_deg: 90.0, speed_mps: 2.0 }).unwrap();
        r.command(DriveCommand::Pause).unwrap();
        let s = r.step(5.0);
        assert!(s.paused);
        assert_eq!(haversine_distance(&s.position, &start()).meters(), 0.0);
        r.command(DriveCommand::Resume).unwrap();
        assert!(!r.step(1.0).paused);
    }

    #[test]
    fn invalid_drive_rejected() {
        let mut r = LiveRover::new(start());
        assert!(r.command(DriveCommand::Drive { heading_deg: 0.0, speed_mps: -1.0 }).is_err());
    }
}
