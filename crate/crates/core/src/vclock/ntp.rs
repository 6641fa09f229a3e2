//! Four-timestamp client/server synchronization and the client-side
//! discipline loop.

use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::clock::{ClockBank, ClockError, NodeClock};
use crate::msgbus::{Direction, LinkModel};
use crate::rng::SimRng;
use crate::units::{Nanos, NS_PER_MS, NS_PER_S};

/// One completed exchange. Timestamps are client send, server receive,
/// server send, client receive; offset is server minus client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncSample {
    pub t1: Nanos,
    pub t2: Nanos,
    pub t3: Nanos,
    pub t4: Nanos,
    pub offset_est_ms: f64,
    pub delay_est_ms: f64,
}

impl SyncSample {
    pub fn from_timestamps(t1: Nanos, t2: Nanos, t3: Nanos, t4: Nanos) -> Self {
        let offset = ((t2 - t1) + (t3 - t4)) as f64 / 2.0;
        let delay = ((t4 - t1) - (t3 - t2)) as f64;
        Self {
            t1,
            t2,
            t3,
            t4,
            offset_est_ms: offset / NS_PER_MS as f64,
            delay_est_ms: delay / NS_PER_MS as f64,
        }
    }
}

/// Run one exchange that leaves the client at true time `t_send`. The link
/// is oriented client → server. Returns `Ok(None)` if either leg is lost.
pub fn ntp_exchange(
    clocks: &mut ClockBank,
    client: &str,
    server: &str,
    link: &LinkModel,
    t_send: Nanos,
    rng: &mut SimRng,
) -> Result<Option<SyncSample>, ClockError> {
    clocks.get(server)?;
    let t1 = clocks.now(client, t_send)?;
    let Some(fwd) = link.sample(Direction::Forward, rng) else {
        return Ok(None);
    };
    let t_server = t_send + fwd;
    let t2 = clocks.now(server, t_server)?;
    let t3 = t2;
    let Some(bwd) = link.sample(Direction::Backward, rng) else {
        return Ok(None);
    };
    let t4 = clocks.now(client, t_server + bwd)?;
    Ok(Some(SyncSample::from_timestamps(t1, t2, t3, t4)))
}

/// Tunables of the discipline loop. Defaults approximate a stock chrony
/// client with `minpoll 4` / `maxpoll 8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisciplineConfig {
    /// Samples kept for the minimum-delay filter and frequency fit.
    pub window: usize,
    pub max_slew_ppm: f64,
    pub min_poll_s: u32,
    pub max_poll_s: u32,
    /// Poll interval doubles while |offset| stays below this.
    pub poll_threshold_ms: f64,
    /// An offset beyond this is treated as a clock step: the window is
    /// flushed and polling restarts at the minimum interval.
    pub step_threshold_ms: f64,
    /// Span of samples needed before the frequency fit is trusted.
    pub min_freq_span_s: f64,
    /// The first sample may step the clock instead of slewing.
    pub initial_step: bool,
}

impl Default for DisciplineConfig {
    fn default() -> Self {
        Self {
            window: 8,
            max_slew_ppm: 500.0,
            min_poll_s: 16,
            max_poll_s: 256,
            poll_threshold_ms: 1.0,
            step_threshold_ms: 4.0,
            min_freq_span_s: 120.0,
            initial_step: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    /// True time of the sample (client receive).
    t: Nanos,
    /// Estimated uncorrected clock error at `t`, ns.
    raw_err_ns: f64,
    delay_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisciplineUpdate {
    pub correction_ms: f64,
    pub poll_interval_s: u32,
    pub freq_ppm: f64,
    pub stepped: bool,
    pub flushed: bool,
}

/// Client-side discipline state for one node.
#[derive(Debug, Clone)]
pub struct Discipline {
    cfg: DisciplineConfig,
    window: VecDeque<Point>,
    poll_interval_s: u32,
    freq: f64,
    synced: bool,
    updates: u64,
    rejected: u64,
}

impl Discipline {
    pub fn new(cfg: DisciplineConfig) -> Self {
        Self {
            poll_interval_s: cfg.min_poll_s,
            cfg,
            window: VecDeque::new(),
            freq: 0.0,
            synced: false,
            updates: 0,
            rejected: 0,
        }
    }

    pub fn poll_interval_s(&self) -> u32 {
        self.poll_interval_s
    }

    pub fn poll_interval(&self) -> Nanos {
        self.poll_interval_s as Nanos * NS_PER_S
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    /// Fold a new sample (completed at true time `t`) into the window and
    /// reprogram the clock correction. Returns `None` for samples rejected
    /// by the filter (negative round-trip delay).
    pub fn discipline_step(&mut self, clock: &mut NodeClock, sample: &SyncSample, t: Nanos) -> Option<DisciplineUpdate> {
        if sample.delay_est_ms < 0.0 {
            self.rejected += 1;
            return None;
        }
        self.updates += 1;
        let corr_now = clock.correction_ns(t);
        let offset_ns = sample.offset_est_ms * NS_PER_MS as f64;
        let point = Point { t, raw_err_ns: corr_now - offset_ns, delay_ns: sample.delay_est_ms * NS_PER_MS as f64 };

        let flushed = self.synced && sample.offset_est_ms.abs() > self.cfg.step_threshold_ms;
        if flushed {
            self.window.clear();
        }
        self.window.push_back(point);
        while self.window.len() > self.cfg.window.max(1) {
            self.window.pop_front();
        }

        if let Some(f) = self.fit_frequency() {
            self.freq = f;
        }

        // Minimum-delay filter; the newest sample wins ties.
        let best = self
            .window
            .iter()
            .rev()
            .min_by(|a, b| a.delay_ns.total_cmp(&b.delay_ns))
            .copied()
            .unwrap_or(point);
        let target = best.raw_err_ns + self.freq * (t - best.t) as f64;

        let stepped = !self.synced && self.cfg.initial_step;
        if stepped {
            clock.step(t, target, self.freq);
        } else {
            clock.slew(t, target, self.freq, self.cfg.max_slew_ppm * 1e-6);
        }
        self.synced = true;

        self.poll_interval_s = if flushed {
            self.cfg.min_poll_s
        } else if sample.offset_est_ms.abs() < self.cfg.poll_threshold_ms {
            (self.poll_interval_s * 2).min(self.cfg.max_poll_s)
        } else {
            (self.poll_interval_s / 2).max(self.cfg.min_poll_s)
        };

        Some(DisciplineUpdate {
            correction_ms: clock.correction_ns(t) / NS_PER_MS as f64,
            poll_interval_s: self.poll_interval_s,
            freq_ppm: self.freq * 1e6,
            stepped,
            flushed,
        })
    }

    /// Least-squares slope of raw error against time over the window, once
    /// the window spans enough time to be meaningful.
    fn fit_frequency(&self) -> Option<f64> {
        let n = self.window.len();
        if n < 2 {
            return None;
        }
        let t0 = self.window[0].t;
        let span = (self.window[n - 1].t - t0) as f64 / NS_PER_S as f64;
        if span < self.cfg.min_freq_span_s {
            return None;
        }
        let nf = n as f64;
        let (mut st, mut se) = (0.0, 0.0);
        for p in &self.window {
            st += (p.t - t0) as f64;
            se += p.raw_err_ns;
        }
        let (mt, me) = (st / nf, se / nf);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for p in &self.window {
            let dx = (p.t - t0) as f64 - mt;
            sxx += dx * dx;
            sxy += dx * (p.raw_err_ns - me);
        }
        if sxx <= 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        // Anything past the oscillator bound is noise, not frequency.
        Some(slope.clamp(-super::clock::MAX_DRIFT_PPM * 1e-6, super::clock::MAX_DRIFT_PPM * 1e-6))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::units::{ms, secs};
    use crate::vclock::ClockState;

    fn bank(client: ClockState) -> ClockBank {
        let mut b = ClockBank::new(11);
        b.add("server".into(), ClockState::ideal()).unwrap();
        b.add("client".into(), client).unwrap();
        b
    }

    #[test]
    fn symmetric_path_recovers_offset_exactly() {
        // Client runs 3 ms behind the server.
        let mut b = bank(ClockState::new(-3.0, 0.0, 0.0));
        let mut r = rng::stream(0, "ntp");
        let s = ntp_exchange(&mut b, "client", "server", &LinkModel::fixed(2.0), secs(10.0), &mut r)
            .unwrap()
            .unwrap();
        assert_eq!(s.offset_est_ms, 3.0);
        assert_eq!(s.delay_est_ms, 4.0);
    }

    #[test]
    fn asymmetric_path_biases_by_half_the_difference() {
        let mut b = bank(ClockState::ideal());
        let mut r = rng::stream(0, "ntp");
        let link = LinkModel::fixed(3.0).with_asymmetry(4.0); // 5 ms out, 1 ms back
        let s = ntp_exchange(&mut b, "client", "server", &link, 0, &mut r).unwrap().unwrap();
        assert_eq!(s.offset_est_ms, 2.0);
    }

    #[test]
    fn lost_exchange_yields_no_sample() {
        let mut b = bank(ClockState::ideal());
        let mut r = rng::stream(0, "ntp");
        let link = LinkModel::fixed(1.0).with_loss(1.0);
        assert_eq!(ntp_exchange(&mut b, "client", "server", &link, 0, &mut r).unwrap(), None);
    }

    #[test]
    fn four_timestamp_formula() {
        let s = SyncSample::from_timestamps(0, ms(5.0), ms(5.0), ms(6.0));
        assert_eq!(s.offset_est_ms, 2.0);
        assert_eq!(s.delay_est_ms, 6.0);
    }

    /// Drive the loop directly: poll, discipline, wait the poll interval.
    fn run_loop(b: &mut ClockBank, d: &mut Discipline, link: &LinkModel, until: Nanos) -> alloc::vec::Vec<u32> {
        let mut r = rng::stream(5, "loop");
        let mut t = 0;
        let mut intervals = alloc::vec::Vec::new();
        while t < until {
            if let Some(s) = ntp_exchange(b, "client", "server", link, t, &mut r).unwrap() {
                let done = t + ms(2.0 * link.latency_mean_ms);
                d.discipline_step(b.get_mut("client").unwrap(), &s, done);
            }
            intervals.push(d.poll_interval_s());
            t += d.poll_interval();
        }
        intervals
    }

    #[test]
    fn constant_offset_converges_without_initial_step() {
        let mut b = bank(ClockState::new(10.0, 0.0, 0.0));
        let mut d = Discipline::new(DisciplineConfig { initial_step: false, ..Default::default() });
        run_loop(&mut b, &mut d, &LinkModel::fixed(2.0), secs(1800.0));
        let err = b.get("client").unwrap().error_ns(secs(1800.0));
        assert!(err.abs() < 0.1 * NS_PER_MS as f64, "residual {err} ns");
    }

    #[test]
    fn zero_offset_keeps_zero_correction_and_backs_off_to_max_poll() {
        let mut b = bank(ClockState::ideal());
        let mut d = Discipline::new(DisciplineConfig::default());
        let intervals = run_loop(&mut b, &mut d, &LinkModel::fixed(1.0), secs(3600.0));
        assert_eq!(*intervals.last().unwrap(), 256);
        assert_eq!(b.get("client").unwrap().correction_ns(secs(3600.0)), 0.0);
    }

    #[test]
    fn drift_is_tracked_by_the_frequency_fit() {
        let mut b = bank(ClockState::new(7.0, 15.0, 0.0));
        let mut d = Discipline::new(DisciplineConfig::default());
        run_loop(&mut b, &mut d, &LinkModel::fixed(2.0), secs(7200.0));
        let c = b.get("client").unwrap();
        assert!(c.error_ns(secs(7200.0)).abs() < 10_000.0);
        assert!((c.program().freq() * 1e6 - 15.0).abs() < 1e-6);
    }

    #[test]
    fn clock_step_drops_poll_interval_to_floor() {
        let mut b = bank(ClockState::ideal());
        let mut d = Discipline::new(DisciplineConfig::default());
        run_loop(&mut b, &mut d, &LinkModel::fixed(1.0), secs(2000.0));
        assert_eq!(d.poll_interval_s(), 256);
        b.get_mut("client").unwrap().shift_offset_ms(5.0);
        let mut r = rng::stream(9, "step");
        let mut t = secs(2000.0);
        let mut seen = alloc::vec::Vec::new();
        for _ in 0..2 {
            let s = ntp_exchange(&mut b, "client", "server", &LinkModel::fixed(1.0), t, &mut r).unwrap().unwrap();
            d.discipline_step(b.get_mut("client").unwrap(), &s, t + ms(2.0));
            seen.push(d.poll_interval_s());
            t += d.poll_interval();
        }
        assert!(seen.contains(&16), "{seen:?}");
    }

    #[test]
    fn negative_delay_samples_are_filtered() {
        let mut b = bank(ClockState::ideal());
        let mut d = Discipline::new(DisciplineConfig::default());
        let s = SyncSample::from_timestamps(0, 10, 20, 5);
        assert!(d.discipline_step(b.get_mut("client").unwrap(), &s, 0).is_none());
        assert_eq!(d.rejected(), 1);
    }
}
