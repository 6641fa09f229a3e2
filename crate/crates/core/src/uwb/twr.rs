use serde::{Deserialize, Serialize};

use crate::units::SPEED_OF_LIGHT;

/// Default reply delay on each side, ns.
pub const DEFAULT_REPLY_NS: f64 = 1_000_000.0;

/// Two clocks each within ±200 ppm.
const REPLY_SLACK: f64 = 2.0 * crate::vclock::MAX_DRIFT_PPM * 1e-6;

/// The four DS-TWR intervals, each measured on its owner's clock (ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwrTimestamps {
    pub t_round1: f64,
    pub t_reply1: f64,
    pub t_round2: f64,
    pub t_reply2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TwrError {
    #[error("intervals must be positive")]
    NonPositive,
    #[error("reply interval exceeds round interval")]
    ReplyExceedsRound,
    #[error("non-positive denominator")]
    Degenerate,
}

impl TwrTimestamps {
    /// Intervals an ideal exchange would produce. The initiator's clock runs
    /// at `1 + eps_init`, the responder's at `1 + eps_resp`; each side waits
    /// its nominal reply delay on its own clock.
    pub fn simulate(tof_ns: f64, reply1_ns: f64, reply2_ns: f64, eps_init: f64, eps_resp: f64) -> Self {
        let (ki, kr) = (1.0 + eps_init, 1.0 + eps_resp);
        Self {
            t_round1: (2.0 * tof_ns + reply1_ns / kr) * ki,
            t_reply1: reply1_ns,
            t_round2: (2.0 * tof_ns + reply2_ns / ki) * kr,
            t_reply2: reply2_ns,
        }
    }
}

/// Alternative double-sided estimator:
/// `(Tr1·Tr2 − Tp1·Tp2) / (Tr1 + Tp1 + Tr2 + Tp2)`.
pub fn dstwr_tof(ts: &TwrTimestamps) -> Result<f64, TwrError> {
    let TwrTimestamps { t_round1: r1, t_reply1: p1, t_round2: r2, t_reply2: p2 } = *ts;
    if [r1, p1, r2, p2].iter().any(|v| !(*v > 0.0)) {
        return Err(TwrError::NonPositive);
    }
    // A reply measured on a fast clock can exceed a round measured on a slow
    // one by up to the combined drift, so only larger excesses are invalid.
    let slack = 1.0 + REPLY_SLACK;
    if p1 > r1 * slack || p2 > r2 * slack {
        return Err(TwrError::ReplyExceedsRound);
    }
    let den = r1 + p1 + r2 + p2;
    if !(den > 0.0) {
        return Err(TwrError::Degenerate);
    }
    // Same numerator as Tr1·Tr2 − Tp1·Tp2, arranged so the round − reply
    // differences are taken before multiplying (exact by Sterbenz).
    Ok(((r1 - p1) * r2 + p1 * (r2 - p2)) / den)
}

pub fn tof_to_m(tof_ns: f64) -> f64 {
    tof_ns * 1e-9 * SPEED_OF_LIGHT
}

pub fn m_to_tof(d_m: f64) -> f64 {
    d_m / SPEED_OF_LIGHT * 1e9
}
