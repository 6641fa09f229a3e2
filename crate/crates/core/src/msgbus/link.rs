use serde::{Deserialize, Serialize};

use crate::rng::{self, SimRng};
use crate::units::{ms, Nanos};

/// Statistical model of one network link between two nodes.
///
/// `asymmetry_ms` is the forward one-way mean minus the backward one-way
/// mean; both directions share `latency_mean_ms` as their midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub latency_mean_ms: f64,
    pub latency_jitter_sigma_ms: f64,
    pub loss_prob: f64,
    pub asymmetry_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error("latency mean must be non-negative, got {0}")]
    NegativeLatency(f64),
    #[error("jitter sigma must be non-negative, got {0}")]
    NegativeJitter(f64),
    #[error("loss probability must lie in [0, 1], got {0}")]
    LossOutOfRange(f64),
}

impl LinkModel {
    /// Zero latency, no jitter, no loss.
    pub const fn ideal() -> Self {
        Self::fixed(0.0)
    }

    pub const fn fixed(latency_ms: f64) -> Self {
        Self {
            latency_mean_ms: latency_ms,
            latency_jitter_sigma_ms: 0.0,
            loss_prob: 0.0,
            asymmetry_ms: 0.0,
        }
    }

    /// 5 GHz WiFi preset.
    pub const fn wireless() -> Self {
        Self {
            latency_mean_ms: 3.0,
            latency_jitter_sigma_ms: 1.2,
            loss_prob: 0.01,
            asymmetry_ms: 0.0,
        }
    }

    /// Switched Ethernet preset.
    pub const fn wired() -> Self {
        Self {
            latency_mean_ms: 0.3,
            latency_jitter_sigma_ms: 0.15,
            loss_prob: 0.0,
            asymmetry_ms: 0.0,
        }
    }

    pub fn with_loss(mut self, p: f64) -> Self {
        self.loss_prob = p;
        self
    }

    pub fn with_asymmetry(mut self, a_ms: f64) -> Self {
        self.asymmetry_ms = a_ms;
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.latency_mean_ms >= 0.0) {
            return Err(LinkError::NegativeLatency(self.latency_mean_ms));
        }
        if !(self.latency_jitter_sigma_ms >= 0.0) {
            return Err(LinkError::NegativeJitter(self.latency_jitter_sigma_ms));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::LossOutOfRange(self.loss_prob));
        }
        Ok(())
    }

    pub fn one_way_mean_ms(&self, dir: Direction) -> f64 {
        let half = 0.5 * self.asymmetry_ms;
        let m = match dir {
            Direction::Forward => self.latency_mean_ms + half,
            Direction::Backward => self.latency_mean_ms - half,
        };
        m.max(0.0)
    }

    /// One transmission: `None` if the packet is lost, else its one-way delay.
    /// Delays never go negative; jitter below zero is clipped.
    pub fn sample(&self, dir: Direction, rng: &mut SimRng) -> Option<Nanos> {
        if rng::chance(rng, self.loss_prob) {
            return None;
        }
        let d = self.one_way_mean_ms(dir) + rng::gauss(rng, self.latency_jitter_sigma_ms);
        Some(ms(d.max(0.0)))
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        Self::ideal()
    }
}
