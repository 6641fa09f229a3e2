use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::pose::{wrap_deg, Pose3D};
use crate::rng::{gauss, SimRng};
use crate::units::Nanos;

pub const DEFAULT_STREAM_HZ: u32 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefSysConfig {
    /// Per-axis Gaussian sigma, m. 0.05 mm puts 3σ at the ±0.15 mm spec.
    pub pos_sigma_m: f64,
    pub yaw_sigma_deg: f64,
}

impl Default for RefSysConfig {
    fn default() -> Self {
        Self { pos_sigma_m: 5e-5, yaw_sigma_deg: 0.005 }
    }
}

impl RefSysConfig {
    pub const NOISELESS: Self = Self { pos_sigma_m: 0.0, yaw_sigma_deg: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefSample {
    pub body_id: String,
    pub pose: Pose3D,
    pub timestamp: Nanos,
    /// Noise added to x, y, z (m).
    pub residual_noise: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown rigid body {0}")]
pub struct UnknownBody(pub String);

/// Optical tracker: bodies are registered by name; poses come from the
/// caller's ground truth plus measurement noise.
#[derive(Debug, Clone, Default)]
pub struct RefSys {
    pub config: RefSysConfig,
    bodies: BTreeSet<String>,
}

impl RefSys {
    pub fn new(config: RefSysConfig) -> Self {
        Self { config, bodies: BTreeSet::new() }
    }

    pub fn register_body(&mut self, id: &str) {
        self.bodies.insert(id.to_string());
    }

    pub fn bodies(&self) -> Vec<&str> {
        self.bodies.iter().map(String::as_str).collect()
    }

    pub fn knows(&self, id: &str) -> bool {
        self.bodies.contains(id)
    }

    pub fn sample(&self, id: &str, truth: &Pose3D, timestamp: Nanos, rng: &mut SimRng) -> Result<RefSample, UnknownBody> {
        if !self.knows(id) {
            return Err(UnknownBody(id.to_string()));
        }
        let s = self.config.pos_sigma_m;
        let residual = [gauss(rng, s), gauss(rng, s), gauss(rng, s)];
        let pose = Pose3D {
            x: truth.x + residual[0],
            y: truth.y + residual[1],
            z: truth.z + residual[2],
            yaw: wrap_deg(truth.yaw + gauss(rng, self.config.yaw_sigma_deg)),
        };
        Ok(RefSample { body_id: id.to_string(), pose, timestamp, residual_noise: residual })
    }
}

/// Topic a body's pose stream is published on.
pub fn pose_topic(body: &str) -> String {
    alloc::format!("/refsys/{body}/pose")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn noiseless_is_exact() {
        let mut r = RefSys::new(RefSysConfig::NOISELESS);
        r.register_body("tag");
        let truth = Pose3D { x: 1.0, y: 2.0, z: 0.3, yaw: 12.0 };
        assert_eq!(r.sample("tag", &truth, 5, &mut stream(0, "r")).unwrap().pose, truth);
    }

    #[test]
    fn unknown_body() {
        let r = RefSys::default();
        assert_eq!(r.sample("ghost", &Pose3D::default(), 0, &mut stream(0, "r")), Err(UnknownBody("ghost".into())));
    }

    #[test]
    fn three_sigma_bound() {
        let mut r = RefSys::default();
        r.register_body("b");
        let mut rng = stream(1, "r");
        let n = 100_000;
        let inside = (0..n)
            .map(|_| r.sample("b", &Pose3D::default(), 0, &mut rng).unwrap().residual_noise)
            .flat_map(|res| res.into_iter())
            .filter(|e| e.abs() <= 0.15e-3)
            .count();
        assert!(inside as f64 >= 0.997 * (3 * n) as f64, "{inside}");
    }
}
