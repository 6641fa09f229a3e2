use serde::{Deserialize, Serialize};

use super::pid::{Cmd, OMEGA_MAX_DEG_S};
use super::pose::{wrap_deg, Pose2D};
use crate::rng::{gauss, SimRng};

pub const DEFAULT_V_MAX: f64 = 0.1;

/// Per-step pose noise at full command; scaled down with the command so a
/// stationary robot does not wander.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorNoise {
    pub pos_sigma_m: f64,
    pub yaw_sigma_deg: f64,
}

impl ActuatorNoise {
    pub const NONE: Self = Self { pos_sigma_m: 0.0, yaw_sigma_deg: 0.0 };
}

impl Default for ActuatorNoise {
    fn default() -> Self {
        Self { pos_sigma_m: 0.0002, yaw_sigma_deg: 0.02 }
    }
}

/// Axis-aligned rectangle the robot cannot leave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Default for Arena {
    fn default() -> Self {
        Self { min: (0.0, 0.0), max: (6.0, 6.0) }
    }
}

impl Arena {
    pub const UNBOUNDED: Self = Self { min: (f64::NEG_INFINITY, f64::NEG_INFINITY), max: (f64::INFINITY, f64::INFINITY) };

    pub fn contains(&self, p: &Pose2D) -> bool {
        (self.min.0..=self.max.0).contains(&p.x) && (self.min.1..=self.max.1).contains(&p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgvState {
    pub pose: Pose2D,
    pub v: f64,
    pub omega: f64,
    pub v_max: f64,
    pub noise: ActuatorNoise,
}

impl AgvState {
    pub fn new(pose: Pose2D) -> Self {
        Self { pose, v: 0.0, omega: 0.0, v_max: DEFAULT_V_MAX, noise: ActuatorNoise::default() }
    }

    pub fn with_noise(mut self, noise: ActuatorNoise) -> Self {
        self.noise = noise;
        self
    }

    /// Unicycle kinematics with `v` clamped to `v_max`, then actuator noise,
    /// then the arena walls.
    pub fn step(&mut self, cmd: Cmd, dt: f64, arena: &Arena, rng: &mut SimRng) {
        debug_assert!(dt > 0.0);
        self.v = cmd.v.clamp(-self.v_max, self.v_max);
        self.omega = cmd.omega;
        let yaw = self.pose.yaw.to_radians();
        let mut x = self.pose.x + self.v * libm::cos(yaw) * dt;
        let mut y = self.pose.y + self.v * libm::sin(yaw) * dt;
        let mut heading = self.pose.yaw + self.omega * dt;
        let lin = if self.v_max > 0.0 { libm::fabs(self.v) / self.v_max } else { 0.0 };
        let ang = (libm::fabs(self.omega) / OMEGA_MAX_DEG_S).min(1.0);
        x += gauss(rng, self.noise.pos_sigma_m * lin);
        y += gauss(rng, self.noise.pos_sigma_m * lin);
        heading += gauss(rng, self.noise.yaw_sigma_deg * ang);
        self.pose = Pose2D {
            x: x.clamp(arena.min.0, arena.max.0),
            y: y.clamp(arena.min.1, arena.max.1),
            yaw: wrap_deg(heading),
        };
    }
}

/// Dead reckoning from applied commands, without noise or walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    pub pose: Pose2D,
}

impl Odometry {
    pub fn integrate(&mut self, v: f64, omega: f64, dt: f64) {
        let yaw = self.pose.yaw.to_radians();
        self.pose = Pose2D::new(
            self.pose.x + v * libm::cos(yaw) * dt,
            self.pose.y + v * libm::sin(yaw) * dt,
            self.pose.yaw + omega * dt,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn quiet(pose: Pose2D) -> AgvState {
        AgvState::new(pose).with_noise(ActuatorNoise::NONE)
    }

    #[test]
    fn straight_line() {
        let mut s = quiet(Pose2D::new(1.0, 1.0, 0.0));
        s.step(Cmd { v: 0.1, omega: 0.0 }, 1.0, &Arena::default(), &mut stream(0, "t"));
        assert_eq!(s.pose, Pose2D::new(1.1, 1.0, 0.0));
    }

    #[test]
    fn spin_in_place() {
        let mut s = quiet(Pose2D::new(1.0, 1.0, 0.0));
        s.step(Cmd { v: 0.0, omega: 90.0 }, 1.0, &Arena::default(), &mut stream(0, "t"));
        assert_eq!(s.pose, Pose2D::new(1.0, 1.0, 90.0));
    }

    #[test]
    fn speed_clamped() {
        let mut s = quiet(Pose2D::new(1.0, 1.0, 0.0));
        s.step(Cmd { v: 0.5, omega: 0.0 }, 1.0, &Arena::default(), &mut stream(0, "t"));
        assert_eq!(s.v, 0.1);
        assert!((s.pose.x - 1.1).abs() < 1e-12);
    }

    #[test]
    fn walls_hold() {
        let mut s = quiet(Pose2D::new(5.95, 1.0, 0.0));
        s.step(Cmd { v: 0.1, omega: 0.0 }, 1.0, &Arena::default(), &mut stream(0, "t"));
        assert_eq!(s.pose.x, 6.0);
    }

    #[test]
    fn stationary_robot_does_not_drift() {
        let mut s = AgvState::new(Pose2D::new(1.0, 1.0, 10.0));
        let mut rng = stream(0, "t");
        for _ in 0..1000 {
            s.step(Cmd::default(), 0.01, &Arena::default(), &mut rng);
        }
        assert_eq!(s.pose, Pose2D::new(1.0, 1.0, 10.0));
    }
}
