//! Brute-force reference implementations shared by the test targets.
#![allow(dead_code)]

use testbed_core::locsolve::Point;
use testbed_core::uwb::TwrTimestamps;

pub fn objective(anchors: &[Point], d: &[f64], p: &Point) -> f64 {
    anchors.iter().zip(d).map(|(a, di)| ((a - p).norm() - di).powi(2)).sum()
}

/// Exhaustive grid over a cube of side `side` centred on `centre`, then
/// repeated refinement, then a derivative-free pattern search.
pub fn grid_polish(anchors: &[Point], d: &[f64], centre: &Point, side: f64) -> Point {
    let f = |p: &Point| objective(anchors, d, p);
    let mut best = *centre;
    let mut half = side / 2.0;
    let mut steps = 25;
    for _ in 0..3 {
        let h = 2.0 * half / steps as f64;
        let origin = best - Point::repeat(half);
        let mut best_val = f64::INFINITY;
        let mut next = best;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let p = origin + Point::new(i as f64 * h, j as f64 * h, k as f64 * h);
                    let v = f(&p);
                    if v < best_val {
                        best_val = v;
                        next = p;
                    }
                }
            }
        }
        best = next;
        half = 2.0 * h;
        steps = 20;
    }
    // Pattern search down to well below a micrometre.
    let mut step = 1e-3;
    let mut val = f(&best);
    while step > 1e-12 {
        let mut moved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut p = best;
                p[axis] += sign * step;
                let v = f(&p);
                if v < val {
                    (best, val, moved) = (p, v, true);
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    best
}

/// Smallest value with at least 95% of the sample at or below it.
pub fn p95_by_counting(values: &[f64]) -> f64 {
    let n = values.len();
    values
        .iter()
        .copied()
        .filter(|v| 100 * values.iter().filter(|x| *x <= v).count() >= 95 * n)
        .fold(f64::INFINITY, f64::min)
}

pub fn hdist(a: &Point, b: &Point) -> f64 {
    libm::hypot(a.x - b.x, a.y - b.y)
}

pub fn rmse_loop(est: &[Point], truth: &[Point]) -> f64 {
    let mut acc = 0.0;
    for i in 0..est.len() {
        let d = hdist(&est[i], &truth[i]);
        acc += d * d;
    }
    (acc / est.len() as f64).sqrt()
}

pub fn median_by_sorting(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn median_offset_ref(est: &[Point], truth: &Point) -> f64 {
    let mx = median_by_sorting(est.iter().map(|p| p.x).collect());
    let my = median_by_sorting(est.iter().map(|p| p.y).collect());
    libm::hypot(mx - truth.x, my - truth.y)
}

/// Intervals derived from absolute event times on two free-running clocks
/// with arbitrary offsets, independent of `TwrTimestamps::simulate`.
pub fn event_oracle(tof: f64, reply: f64, eps_tag: f64, eps_anchor: f64) -> TwrTimestamps {
    let (kt, ka) = (1.0 + eps_tag, 1.0 + eps_anchor);
    let tag = |t: f64| kt * t + 1234.5;
    let anchor = |t: f64| ka * t - 987.25;
    let poll_tx = 0.0;
    let poll_rx = tof;
    let resp_tx = poll_rx + reply / ka;
    let resp_rx = resp_tx + tof;
    let final_tx = resp_rx + reply / kt;
    let final_rx = final_tx + tof;
    TwrTimestamps {
        t_round1: tag(resp_rx) - tag(poll_tx),
        t_reply1: anchor(resp_tx) - anchor(poll_rx),
        t_round2: anchor(final_rx) - anchor(resp_tx),
        t_reply2: tag(final_tx) - tag(resp_rx),
    }
}
