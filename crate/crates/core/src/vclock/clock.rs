use alloc::collections::BTreeMap;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::msgbus::NodeId;
use crate::rng::{self, SimRng};
use crate::units::{Nanos, NS_PER_MS, NS_PER_US};

/// Crystal oscillators outside this bound are treated as broken.
pub const MAX_DRIFT_PPM: f64 = 200.0;

/// The error model of one node clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub offset0_ms: f64,
    pub drift_ppm: f64,
    pub read_jitter_sigma_us: f64,
    /// Correction currently subtracted from the raw reading.
    pub disciplined_correction_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClockError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already has a clock")]
    Duplicate(NodeId),
    #[error("drift {0} ppm exceeds the {MAX_DRIFT_PPM} ppm bound")]
    DriftOutOfRange(f64),
    #[error("read jitter sigma must be non-negative, got {0}")]
    NegativeJitter(f64),
}

impl ClockState {
    pub const fn ideal() -> Self {
        Self { offset0_ms: 0.0, drift_ppm: 0.0, read_jitter_sigma_us: 0.0, disciplined_correction_ms: 0.0 }
    }

    pub const fn new(offset0_ms: f64, drift_ppm: f64, read_jitter_sigma_us: f64) -> Self {
        Self { offset0_ms, drift_ppm, read_jitter_sigma_us, disciplined_correction_ms: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if !(self.drift_ppm.abs() <= MAX_DRIFT_PPM) {
            return Err(ClockError::DriftOutOfRange(self.drift_ppm));
        }
        if !(self.read_jitter_sigma_us >= 0.0) {
            return Err(ClockError::NegativeJitter(self.read_jitter_sigma_us));
        }
        Ok(())
    }
}

impl Default for ClockState {
    fn default() -> Self {
        Self::ideal()
    }
}

/// Piecewise-linear correction: a frequency term plus a bounded-rate slew
/// that ends once the programmed gap is removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionProgram {
    origin: Nanos,
    base_ns: f64,
    /// Dimensionless frequency correction (ns per ns).
    freq: f64,
    slew_rate: f64,
    slew_until: Nanos,
}

impl CorrectionProgram {
    pub fn constant(base_ns: f64) -> Self {
        Self { origin: 0, base_ns, freq: 0.0, slew_rate: 0.0, slew_until: 0 }
    }

    pub fn at(&self, t: Nanos) -> f64 {
        let dt = (t - self.origin) as f64;
        let slew_dt = (t.min(self.slew_until) - self.origin).max(0) as f64;
        self.base_ns + self.freq * dt + self.slew_rate * slew_dt
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    pub fn is_slewing(&self, t: Nanos) -> bool {
        self.slew_rate != 0.0 && t < self.slew_until
    }
}

/// A simulated node clock: `true + offset0 + drift*t - correction + jitter`.
pub struct NodeClock {
    params: ClockState,
    correction: CorrectionProgram,
    rng: SimRng,
}

impl NodeClock {
    pub fn new(params: ClockState, rng: SimRng) -> Result<Self, ClockError> {
        params.validate()?;
        let correction = CorrectionProgram::constant(params.disciplined_correction_ms * NS_PER_MS as f64);
        Ok(Self { params, correction, rng })
    }

    pub fn params(&self) -> &ClockState {
        &self.params
    }

    /// Snapshot of the clock state with the correction evaluated at `t`.
    pub fn state_at(&self, t: Nanos) -> ClockState {
        ClockState { disciplined_correction_ms: self.correction.at(t) / NS_PER_MS as f64, ..self.params }
    }

    pub fn raw_error_ns(&self, t: Nanos) -> f64 {
        self.params.offset0_ms * NS_PER_MS as f64 + self.params.drift_ppm * 1e-6 * t as f64
    }

    /// Noise-free reading minus true time.
    pub fn error_ns(&self, t: Nanos) -> f64 {
        self.raw_error_ns(t) - self.correction.at(t)
    }

    pub fn correction_ns(&self, t: Nanos) -> f64 {
        self.correction.at(t)
    }

    pub fn program(&self) -> &CorrectionProgram {
        &self.correction
    }

    /// Read the clock at true time `t`, including the read jitter draw.
    pub fn read(&mut self, t: Nanos) -> Nanos {
        let jitter = rng::gauss(&mut self.rng, self.params.read_jitter_sigma_us * NS_PER_US as f64);
        t + libm::round(self.error_ns(t) + jitter) as Nanos
    }

    /// Jump the correction to `target_ns` at `t`, then run at `freq`.
    pub fn step(&mut self, t: Nanos, target_ns: f64, freq: f64) {
        self.correction = CorrectionProgram { origin: t, base_ns: target_ns, freq, slew_rate: 0.0, slew_until: t };
    }

    /// Slew from the current correction towards `target_ns` (valid at `t`,
    /// moving at `freq`) with at most `max_rate` extra rate.
    pub fn slew(&mut self, t: Nanos, target_ns: f64, freq: f64, max_rate: f64) {
        let current = self.correction.at(t);
        let gap = target_ns - current;
        let (rate, until) = if gap == 0.0 || max_rate <= 0.0 {
            (0.0, t)
        } else {
            let dur = libm::ceil(gap.abs() / max_rate);
            // Trim the rate so the slew lands exactly on the target.
            (gap / dur, t + dur as Nanos)
        };
        self.correction = CorrectionProgram { origin: t, base_ns: current, freq, slew_rate: rate, slew_until: until };
    }

    /// Perturb the physical oscillator (e.g. a clock step fault).
    pub fn shift_offset_ms(&mut self, delta_ms: f64) {
        self.params.offset0_ms += delta_ms;
    }
}

/// All node clocks of one simulation, keyed by node.
pub struct ClockBank {
    seed: u64,
    clocks: BTreeMap<NodeId, NodeClock>,
}

impl ClockBank {
    pub fn new(seed: u64) -> Self {
        Self { seed, clocks: BTreeMap::new() }
    }

    pub fn add(&mut self, node: NodeId, state: ClockState) -> Result<(), ClockError> {
        if self.clocks.contains_key(&node) {
            return Err(ClockError::Duplicate(node));
        }
        let rng = rng::stream(self.seed, &format!("clock/{node}"));
        let clock = NodeClock::new(state, rng)?;
        self.clocks.insert(node, clock);
        Ok(())
    }

    pub fn contains(&self, node: &str) -> bool {
        self.clocks.contains_key(node)
    }

    pub fn get(&self, node: &str) -> Result<&NodeClock, ClockError> {
        self.clocks.get(node).ok_or_else(|| ClockError::UnknownNode(NodeId::from(node)))
    }

    pub fn get_mut(&mut self, node: &str) -> Result<&mut NodeClock, ClockError> {
        self.clocks.get_mut(node).ok_or_else(|| ClockError::UnknownNode(NodeId::from(node)))
    }

    /// The node's reading of true time `t`.
    pub fn now(&mut self, node: &str, t: Nanos) -> Result<Nanos, ClockError> {
        Ok(self.get_mut(node)?.read(t))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.clocks.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{secs, NS_PER_MS};

    fn bank_with(state: ClockState) -> ClockBank {
        let mut b = ClockBank::new(3);
        b.add("n".into(), state).unwrap();
        b
    }

    #[test]
    fn identity_clock_reads_true_time() {
        let mut b = bank_with(ClockState::ideal());
        for t in [0, 17, secs(1234.5)] {
            assert_eq!(b.now("n", t).unwrap(), t);
        }
    }

    #[test]
    fn constant_offset_is_exact() {
        let mut b = bank_with(ClockState::new(5.0, 0.0, 0.0));
        let t = secs(42.0);
        assert_eq!(b.now("n", t).unwrap() - t, 5 * NS_PER_MS);
    }

    #[test]
    fn drift_accumulates_linearly() {
        let mut b = bank_with(ClockState::new(0.0, 20.0, 0.0));
        let t = secs(1000.0);
        assert_eq!(b.now("n", t).unwrap() - t, 20 * NS_PER_MS);
    }

    #[test]
    fn unknown_node_and_bad_drift_are_rejected() {
        let mut b = bank_with(ClockState::ideal());
        assert_eq!(b.now("x", 0), Err(ClockError::UnknownNode("x".into())));
        assert!(matches!(b.add("y".into(), ClockState::new(0.0, 250.0, 0.0)), Err(ClockError::DriftOutOfRange(_))));
        assert!(matches!(b.add("n".into(), ClockState::ideal()), Err(ClockError::Duplicate(_))));
    }

    #[test]
    fn slew_is_rate_limited_and_lands_on_target() {
        let mut b = bank_with(ClockState::new(10.0, 0.0, 0.0));
        let c = b.get_mut("n").unwrap();
        let target = 10.0 * NS_PER_MS as f64;
        c.slew(0, target, 0.0, 500e-6);
        // 10 ms at 500 ppm takes 20 s.
        let halfway = c.error_ns(secs(10.0));
        assert!((halfway - 5.0 * NS_PER_MS as f64).abs() < 1.0);
        assert!(c.error_ns(secs(20.0)).abs() < 1e-6);
        assert!(c.error_ns(secs(500.0)).abs() < 1e-6);
    }

    #[test]
    fn state_snapshot_reports_correction() {
        let mut b = bank_with(ClockState::new(2.0, 0.0, 0.0));
        b.get_mut("n").unwrap().step(0, 2.0 * NS_PER_MS as f64, 0.0);
        let s = b.get("n").unwrap().state_at(secs(1.0));
        assert_eq!(s.disciplined_correction_ms, 2.0);
    }
}
