mod oracles;

use oracles::event_oracle;
use proptest::prelude::*;
use testbed_core::rng::stream;
use testbed_core::uwb::*;

#[test]
fn drift_grid_stays_under_a_millimetre() {
    let tof = m_to_tof(5.0);
    let mut worst: f64 = 0.0;
    for et in (-20..=20).step_by(5) {
        for ea in (-20..=20).step_by(5) {
            let ts = event_oracle(tof, DEFAULT_REPLY_NS, et as f64 * 1e-6, ea as f64 * 1e-6);
            let d = tof_to_m(dstwr_tof(&ts).unwrap());
            worst = worst.max((d - 5.0).abs());
            let sim = TwrTimestamps::simulate(tof, DEFAULT_REPLY_NS, DEFAULT_REPLY_NS, et as f64 * 1e-6, ea as f64 * 1e-6);
            assert!((sim.t_round1 - ts.t_round1).abs() < 1e-6);
            assert!((sim.t_round2 - ts.t_round2).abs() < 1e-6);
        }
    }
    assert!(worst < 1e-3, "{worst}");
}

proptest! {
    /// The reply-time drift term cancels; what remains is the tof scaled by
    /// the mean clock rate, with second-order residue.
    #[test]
    fn drift_cancels_to_second_order(d in 0.2f64..30.0, et in -20.0f64..20.0, ea in -20.0f64..20.0) {
        let tof = m_to_tof(d);
        let (et, ea) = (et * 1e-6, ea * 1e-6);
        let est = dstwr_tof(&event_oracle(tof, DEFAULT_REPLY_NS, et, ea)).unwrap();
        let scaled = tof * (1.0 + (et + ea) / 2.0);
        prop_assert!(((est - scaled) / tof).abs() <= 1e-9);
    }

    #[test]
    fn ideal_round_trip(ticks in 1u64..(64 << 20), r1 in 1u32..2000, r2 in 1u32..2000) {
        let tof = ticks as f64 / 1048576.0;
        let ts = TwrTimestamps::simulate(tof, r1 as f64 * 1000.0, r2 as f64 * 1000.0, 0.0, 0.0);
        let est = dstwr_tof(&ts).unwrap();
        prop_assert!(((est - tof) / tof).abs() <= 1e-12);
    }
}

fn node(id: &str, p: [f64; 3]) -> RadioNode {
    RadioNode { id: id.into(), position: p, drift_ppm: 0.0, active: true }
}

#[test]
fn bias_shows_in_the_mean() {
    let params = ChannelParams { bias: 0.05, per: 0.0, ..ChannelParams::default() };
    let mut ch = UwbChannel::new(params, stream(5, "uwb"));
    let (tag, anchor) = (node("t", [1.0, 1.0, 0.3]), node("a", [4.0, 1.0, 2.5]));
    let truth = (9.0f64 + 2.2 * 2.2).sqrt();
    let n = 10_000;
    let mean = (0..n).map(|i| ch.exchange(&tag, &anchor, i).distance.unwrap()).sum::<f64>() / n as f64;
    let tol = 3.0 * 0.05 / (n as f64).sqrt();
    assert!((mean - truth - 0.05).abs() < tol, "{}", mean - truth);
}

#[test]
fn packet_errors_are_binomial() {
    let mut ch = UwbChannel::new(ChannelParams::default(), stream(1, "uwb"));
    let tag = node("t", [1.0, 1.0, 0.3]);
    let anchors: Vec<_> = (0..4).map(|i| node(&i.to_string(), [i as f64, 5.0, 2.5])).collect();
    let dropped = BurstPlan::new(4, 100)
        .map(|(i, a)| ch.exchange(&tag, &anchors[a], i))
        .filter(|m| m.status == RangeStatus::Dropped)
        .count();
    // 400 · 0.02 = 8, σ ≈ 2.8
    assert!((1..=17).contains(&dropped), "{dropped}");
}

#[test]
fn powered_off_anchor_drops_its_share() {
    let mut ch = UwbChannel::new(ChannelParams::ideal(), stream(1, "uwb"));
    let tag = node("t", [1.0, 1.0, 0.3]);
    let mut anchors: Vec<_> = (0..4).map(|i| node(&i.to_string(), [i as f64, 5.0, 2.5])).collect();
    anchors[2].active = false;
    let ms: Vec<_> = BurstPlan::new(4, 100).map(|(i, a)| ch.exchange(&tag, &anchors[a], i)).collect();
    let ok = ms.iter().filter(|m| m.status == RangeStatus::Ok).count();
    assert_eq!((ok, ms.len() - ok), (300, 100));
    assert!(ms.iter().filter(|m| m.status == RangeStatus::Dropped).all(|m| m.anchor_id == "2"));
}

#[test]
fn nlos_zone_adds_bias() {
    let zone = NlosZone { polygon: vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)], extra_bias: 0.4 };
    let params = ChannelParams { nlos_zones: vec![zone], ..ChannelParams::ideal() };
    let mut ch = UwbChannel::new(params, stream(1, "uwb"));
    let anchor = node("a", [1.0, 1.0, 3.0]);
    let inside = ch.exchange(&node("t", [1.0, 1.0, 0.0]), &anchor, 0).distance.unwrap();
    assert!((inside - 3.4).abs() < 1e-6);
    let outside = ch.exchange(&node("t", [5.0, 1.0, 0.0]), &anchor, 1).distance.unwrap();
    assert!((outside - 5.0).abs() < 1e-6);
}
