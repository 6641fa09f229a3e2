use serde::{Deserialize, Serialize};

use super::pid::{Cmd, PidController, PidGains};
use super::pose::{wrap_deg, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GotoConfig {
    pub gains: PidGains,
    /// Control period, s.
    pub dt: f64,
    pub timeout_s: f64,
    /// The controller stops driving once inside this fraction of the
    /// arrival thresholds, so the hold check starts with margin.
    pub settle_fraction: f64,
    /// Drive only when the heading is within this many degrees of the
    /// bearing; rotate in place otherwise.
    pub drive_window_deg: f64,
}

impl Default for GotoConfig {
    fn default() -> Self {
        Self { gains: PidGains::default(), dt: 0.01, timeout_s: 120.0, settle_fraction: 0.8, drive_window_deg: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GotoStatus {
    Running,
    Arrived,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Drive,
    Align,
    Hold(f64),
}

/// Drive, then align, then hold: closed-loop waypoint control on measured
/// poses.
#[derive(Debug, Clone)]
pub struct Goto {
    pub target: Pose2D,
    cfg: GotoConfig,
    phase: Phase,
    pid: PidController,
    elapsed: f64,
}

impl Goto {
    pub fn new(target: Pose2D, cfg: GotoConfig) -> Self {
        Self { target, cfg, phase: Phase::Drive, pid: PidController::default(), elapsed: 0.0 }
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    fn enter(&mut self, phase: Phase) {
        if core::mem::discriminant(&phase) != core::mem::discriminant(&self.phase) {
            self.pid.reset();
        }
        self.phase = phase;
    }

    /// One control period from the measured pose.
    pub fn tick(&mut self, measured: &Pose2D, v_max: f64) -> (Cmd, GotoStatus) {
        let g = self.cfg.gains;
        let dt = self.cfg.dt;
        self.elapsed += dt;
        let dist = measured.distance(&self.target);
        let yaw_err = measured.yaw_error(&self.target);
        let within = dist <= g.arrival_pos_thresh && libm::fabs(yaw_err) <= g.arrival_yaw_thresh;

        if let Phase::Hold(held) = self.phase {
            if within {
                let held = held + dt;
                self.phase = Phase::Hold(held);
                if held + 1e-9 >= g.hold_time {
                    return (Cmd::default(), GotoStatus::Arrived);
                }
                return (Cmd::default(), self.check_timeout());
            }
            self.enter(Phase::Drive);
        }
        if self.elapsed > self.cfg.timeout_s {
            return (Cmd::default(), GotoStatus::TimedOut);
        }

        let settle_pos = self.cfg.settle_fraction * g.arrival_pos_thresh;
        let settle_yaw = self.cfg.settle_fraction * g.arrival_yaw_thresh;
        if self.phase == Phase::Drive && dist <= settle_pos {
            self.enter(Phase::Align);
        }
        if self.phase == Phase::Align && dist > g.arrival_pos_thresh {
            self.enter(Phase::Drive);
        }

        let cmd = match self.phase {
            Phase::Drive => {
                let bearing = libm::atan2(self.target.y - measured.y, self.target.x - measured.x).to_degrees();
                let mut heading_err = wrap_deg(bearing - measured.yaw);
                let mut sign = 1.0;
                if libm::fabs(heading_err) > 90.0 {
                    heading_err = wrap_deg(heading_err - 180.0);
                    sign = -1.0;
                }
                let along = if libm::fabs(heading_err) <= self.cfg.drive_window_deg {
                    dist * libm::cos(heading_err.to_radians())
                } else {
                    0.0
                };
                let cmd = self.pid.update(&g, along, heading_err, dt, v_max);
                Cmd { v: sign * cmd.v, omega: cmd.omega }
            }
            Phase::Align if libm::fabs(yaw_err) <= settle_yaw => {
                self.enter(Phase::Hold(0.0));
                Cmd::default()
            }
            Phase::Align => Cmd { v: 0.0, omega: self.pid.update(&g, 0.0, yaw_err, dt, v_max).omega },
            Phase::Hold(_) => Cmd::default(),
        };
        (cmd, GotoStatus::Running)
    }

    fn check_timeout(&self) -> GotoStatus {
        if self.elapsed > self.cfg.timeout_s {
            GotoStatus::TimedOut
        } else {
            GotoStatus::Running
        }
    }
}
