use serde::{Deserialize, Serialize};

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let r = libm::fmod(a, 360.0);
    if r <= -180.0 {
        r + 360.0
    } else if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Degrees in (-180, 180].
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_deg(yaw) }
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    /// Signed yaw difference `other - self`, wrapped.
    pub fn yaw_error(&self, other: &Pose2D) -> f64 {
        wrap_deg(other.yaw - self.yaw)
    }

    pub fn lift(&self, z: f64) -> Pose3D {
        Pose3D { x: self.x, y: self.y, z, yaw: self.yaw }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, yaw: 0.0 }
    }

    pub fn flat(&self) -> Pose2D {
        Pose2D { x: self.x, y: self.y, yaw: self.yaw }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(540.0), 180.0);
        assert_eq!(wrap_deg(-90.0), -90.0);
        assert_eq!(wrap_deg(270.0), -90.0);
    }

    proptest! {
        #[test]
        fn wrapped_range(a in -1e6f64..1e6) {
            let w = wrap_deg(a);
            prop_assert!(w > -180.0 && w <= 180.0);
            let turns = (a - w) / 360.0;
            prop_assert!((turns - libm::round(turns)).abs() < 1e-6);
        }
    }
}
