use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Convex region in the horizontal plane that adds a positive range bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlosZone {
    pub polygon: Vec<(f64, f64)>,
    pub extra_bias: f64,
}

impl NlosZone {
    /// Even-odd ray casting; boundary points may fall either way.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let p = &self.polygon;
        let mut inside = false;
        let mut j = p.len().wrapping_sub(1);
        for i in 0..p.len() {
            let (xi, yi) = p[i];
            let (xj, yj) = p[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub rf_channel: u8,
    pub center_freq_mhz: f64,
    pub bandwidth_mhz: f64,
    /// Gaussian range noise, m.
    pub noise_sigma: f64,
    pub bias: f64,
    /// Packet error rate per exchange.
    pub per: f64,
    #[serde(default)]
    pub nlos_zones: Vec<NlosZone>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            rf_channel: 9,
            center_freq_mhz: 7987.2,
            bandwidth_mhz: 499.2,
            noise_sigma: 0.05,
            bias: 0.0,
            per: 0.02,
            nlos_zones: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("noise sigma must be non-negative")]
    NegativeNoise,
    #[error("packet error rate must be in [0, 1]")]
    PerOutOfRange,
}

impl ChannelParams {
    pub fn ideal() -> Self {
        Self { noise_sigma: 0.0, per: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.noise_sigma >= 0.0) {
            return Err(ChannelError::NegativeNoise);
        }
        if !(0.0..=1.0).contains(&self.per) {
            return Err(ChannelError::PerOutOfRange);
        }
        Ok(())
    }

    pub fn nlos_bias(&self, x: f64, y: f64) -> f64 {
        self.nlos_zones.iter().filter(|z| z.contains(x, y)).map(|z| z.extra_bias).sum()
    }
}
