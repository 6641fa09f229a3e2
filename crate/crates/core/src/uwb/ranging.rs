use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::channel::ChannelParams;
use super::twr::{dstwr_tof, m_to_tof, tof_to_m, TwrTimestamps, DEFAULT_REPLY_NS};
use crate::rng::{chance, gauss, SimRng};

/// Frames on air per DS-TWR exchange: poll, response, final.
pub const FRAMES_PER_EXCHANGE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeStatus {
    Ok,
    Dropped,
}

impl RangeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RangeStatus::Ok => "ok",
            RangeStatus::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub tag_id: String,
    pub anchor_id: String,
    pub exchange_index: u32,
    /// Metres; present iff `status` is ok.
    pub distance: Option<f64>,
    pub status: RangeStatus,
    pub timestamps: Option<TwrTimestamps>,
}

/// A radio taking part in an exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioNode {
    pub id: String,
    pub position: [f64; 3],
    pub drift_ppm: f64,
    /// Powered and running a ranging-capable behavior.
    pub active: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelUsage {
    pub exchanges: u64,
    pub frames: u64,
}

/// The UWB medium. Only ranging frames cross it; `usage` is the audit
/// counter for that.
#[derive(Debug, Clone)]
pub struct UwbChannel {
    pub params: ChannelParams,
    pub reply_ns: f64,
    rng: SimRng,
    usage: ChannelUsage,
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    libm::sqrt(dx * dx + dy * dy + dz * dz)
}

impl UwbChannel {
    pub fn new(params: ChannelParams, rng: SimRng) -> Self {
        Self { params, reply_ns: DEFAULT_REPLY_NS, rng, usage: ChannelUsage::default() }
    }

    pub fn usage(&self) -> ChannelUsage {
        self.usage
    }

    /// One DS-TWR exchange initiated by `tag`.
    pub fn exchange(&mut self, tag: &RadioNode, anchor: &RadioNode, index: u32) -> RangeMeasurement {
        self.usage.exchanges += 1;
        self.usage.frames += FRAMES_PER_EXCHANGE;
        let dropped = RangeMeasurement {
            tag_id: tag.id.clone(),
            anchor_id: anchor.id.clone(),
            exchange_index: index,
            distance: None,
            status: RangeStatus::Dropped,
            timestamps: None,
        };
        if !tag.active || !anchor.active || chance(&mut self.rng, self.params.per) {
            return dropped;
        }
        let truth = dist3(&tag.position, &anchor.position);
        let ts = TwrTimestamps::simulate(m_to_tof(truth), self.reply_ns, self.reply_ns, tag.drift_ppm * 1e-6, anchor.drift_ppm * 1e-6);
        let Ok(tof) = dstwr_tof(&ts) else { return dropped };
        let d = tof_to_m(tof)
            + self.params.bias
            + self.params.nlos_bias(tag.position[0], tag.position[1])
            + gauss(&mut self.rng, self.params.noise_sigma);
        RangeMeasurement { distance: Some(d.max(0.0)), status: RangeStatus::Ok, timestamps: Some(ts), ..dropped }
    }
}

/// Round-robin schedule of a burst: `n_per_anchor` rounds over `anchors`.
#[derive(Debug, Clone)]
pub struct BurstPlan {
    pub anchors: usize,
    pub n_per_anchor: u32,
    next: u32,
}

impl BurstPlan {
    pub fn new(anchors: usize, n_per_anchor: u32) -> Self {
        Self { anchors, n_per_anchor, next: 0 }
    }

    pub fn total(&self) -> u32 {
        self.anchors as u32 * self.n_per_anchor
    }
}

impl Iterator for BurstPlan {
    /// (exchange index, anchor slot)
    type Item = (u32, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total() {
            return None;
        }
        let i = self.next;
        self.next += 1;
        Some((i, i as usize % self.anchors))
    }
}

/// `RNG,<exchange_index>,<anchor_id>,<d_mm>,<status>`; `d_mm` is empty for
/// dropped exchanges.
pub fn format_rng_line(m: &RangeMeasurement) -> String {
    let d = m.distance.map_or_else(String::new, |d| format!("{:.6}", d * 1000.0));
    format!("RNG,{},{},{},{}", m.exchange_index, m.anchor_id, d, m.status.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngLine {
    pub exchange_index: u32,
    pub anchor_id: String,
    pub distance: Option<f64>,
}

pub fn parse_rng_line(line: &str) -> Option<RngLine> {
    let f: Vec<&str> = line.split(',').collect();
    let [tag, idx, anchor, d, status] = f[..] else { return None };
    if tag != "RNG" {
        return None;
    }
    let distance = match status {
        "ok" => Some(d.parse::<f64>().ok()? / 1000.0),
        "dropped" => None,
        _ => return None,
    };
    Some(RngLine { exchange_index: idx.parse().ok()?, anchor_id: anchor.to_string(), distance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn node(id: &str, p: [f64; 3]) -> RadioNode {
        RadioNode { id: id.into(), position: p, drift_ppm: 0.0, active: true }
    }

    #[test]
    fn exact_without_noise() {
        let mut ch = UwbChannel::new(ChannelParams::ideal(), stream(0, "uwb"));
        let m = ch.exchange(&node("t", [0.0, 0.0, 0.0]), &node("a", [3.0, 0.0, 0.0]), 0);
        assert!((m.distance.unwrap() - 3.0).abs() < 1e-6);
        assert_eq!(ch.usage(), ChannelUsage { exchanges: 1, frames: 3 });
    }

    #[test]
    fn inactive_anchor_drops() {
        let mut ch = UwbChannel::new(ChannelParams::ideal(), stream(0, "uwb"));
        let mut a = node("a", [3.0, 0.0, 0.0]);
        a.active = false;
        let m = ch.exchange(&node("t", [0.0; 3]), &a, 4);
        assert_eq!((m.status, m.distance), (RangeStatus::Dropped, None));
    }

    #[test]
    fn round_robin() {
        let plan: Vec<_> = BurstPlan::new(4, 100).collect();
        assert_eq!(plan.len(), 400);
        assert_eq!(plan[..5], [(0, 0), (1, 1), (2, 2), (3, 3), (4, 0)]);
        assert_eq!(BurstPlan::new(0, 100).count(), 0);
    }

    #[test]
    fn line_round_trip() {
        let m = RangeMeasurement {
            tag_id: "t".into(),
            anchor_id: "7".into(),
            exchange_index: 12,
            distance: Some(2.345_678_912),
            status: RangeStatus::Ok,
            timestamps: None,
        };
        let line = format_rng_line(&m);
        assert_eq!(line, "RNG,12,7,2345.678912,ok");
        let back = parse_rng_line(&line).unwrap();
        assert!((back.distance.unwrap() - 2.345_678_912).abs() < 1e-9);
        let dropped = RangeMeasurement { distance: None, status: RangeStatus::Dropped, ..m };
        assert_eq!(format_rng_line(&dropped), "RNG,12,7,,dropped");
        assert_eq!(parse_rng_line("RNG,12,7,,dropped").unwrap().distance, None);
        assert_eq!(parse_rng_line("EDGE,1"), None);
    }
}
