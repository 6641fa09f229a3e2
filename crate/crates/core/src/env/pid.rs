use serde::{Deserialize, Serialize};

pub const OMEGA_MAX_DEG_S: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub linear: AxisGains,
    pub angular: AxisGains,
    pub arrival_pos_thresh: f64,
    pub arrival_yaw_thresh: f64,
    pub hold_time: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            linear: AxisGains { kp: 0.8, ki: 0.05, kd: 0.1 },
            angular: AxisGains { kp: 2.0, ki: 0.0, kd: 0.2 },
            arrival_pos_thresh: 0.005,
            arrival_yaw_thresh: 0.3,
            hold_time: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("arrival thresholds and hold time must be positive")]
pub struct GainsError;

impl PidGains {
    pub fn validate(&self) -> Result<(), GainsError> {
        let ok = self.arrival_pos_thresh > 0.0 && self.arrival_yaw_thresh > 0.0 && self.hold_time >= 0.0;
        ok.then_some(()).ok_or(GainsError)
    }
}

/// Single-axis PID with conditional-integration anti-windup.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Pid {
    pub integrator: f64,
    prev: Option<f64>,
}

impl Pid {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn update(&mut self, g: &AxisGains, error: f64, dt: f64, limit: f64) -> f64 {
        let deriv = self.prev.map_or(0.0, |p| (error - p) / dt);
        self.prev = Some(error);
        let trial = self.integrator + error * dt;
        let raw = g.kp * error + g.ki * trial + g.kd * deriv;
        let out = raw.clamp(-limit, limit);
        // Integrate only while unsaturated, or when the error pulls the
        // output back out of saturation.
        if raw == out || (raw > limit) != (error > 0.0) {
            self.integrator = trial;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cmd {
    /// m/s
    pub v: f64,
    /// deg/s
    pub omega: f64,
}

/// Linear and angular loops together; outputs clamped to `v_max` and
/// [`OMEGA_MAX_DEG_S`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidController {
    pub linear: Pid,
    pub angular: Pid,
}

impl PidController {
    /// `pos_err` is the signed distance along the direction of travel (m),
    /// `yaw_err` the heading error (deg).
    pub fn update(&mut self, gains: &PidGains, pos_err: f64, yaw_err: f64, dt: f64, v_max: f64) -> Cmd {
        Cmd {
            v: self.linear.update(&gains.linear, pos_err, dt, v_max),
            omega: self.angular.update(&gains.angular, yaw_err, dt, OMEGA_MAX_DEG_S),
        }
    }

    pub fn reset(&mut self) {
        self.linear.reset();
        self.angular.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_zero_command() {
        let mut c = PidController::default();
        assert_eq!(c.update(&PidGains::default(), 0.0, 0.0, 0.01, 0.1), Cmd::default());
    }

    #[test]
    fn pure_p_clamps_at_vmax() {
        let gains = PidGains {
            linear: AxisGains { kp: 1.0, ki: 0.0, kd: 0.0 },
            ..PidGains::default()
        };
        let mut c = PidController::default();
        assert_eq!(c.update(&gains, 0.1, 0.0, 0.01, 0.1).v, 0.1);
        c.reset();
        assert_eq!(c.update(&gains, 0.5, 0.0, 0.01, 0.1).v, 0.1);
        assert_eq!(c.update(&gains, 0.05, 0.0, 0.01, 0.1).v, 0.05);
    }

    #[test]
    fn integrator_frozen_in_saturation() {
        let g = AxisGains { kp: 1.0, ki: 1.0, kd: 0.0 };
        let mut p = Pid::default();
        for _ in 0..1000 {
            p.update(&g, 10.0, 0.01, 0.1);
        }
        assert_eq!(p.integrator, 0.0);
    }

    #[test]
    fn omega_clamped() {
        let mut c = PidController::default();
        let cmd = c.update(&PidGains::default(), 0.0, 170.0, 0.01, 0.1);
        assert_eq!(cmd.omega, OMEGA_MAX_DEG_S);
    }
}
