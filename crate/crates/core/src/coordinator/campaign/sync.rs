use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{bring_up, firmware, CampaignError, ClockSpread, Finished};
use crate::coordinator::world::{DutSpec, Mount, NtpStatus, World, WorldConfig};
use crate::dut::Behavior;
use crate::msgbus::{LinkModel, NodeId};
use crate::rng;
use crate::units::{secs, Nanos, NS_PER_MS, NS_PER_S};
use crate::vclock::{deviation_cdf, pairwise_deviations, ClockState, DisciplineConfig, EdgeEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncParams {
    pub n_nodes: u32,
    /// Time given to NTP before the first edge, s.
    pub warmup_s: f64,
    pub edge_rate_hz: f64,
    pub duration_s: f64,
    pub clocks: ClockSpread,
    /// Extra forward-minus-backward latency on every node link, ms.
    pub asymmetry_ms: f64,
    pub discipline: DisciplineConfig,
}

impl Default for SyncParams {
    fn default() -> Self {
        Self {
            n_nodes: 4,
            warmup_s: 1800.0,
            edge_rate_hz: 1.0,
            duration_s: 1800.0,
            clocks: ClockSpread::default(),
            asymmetry_ms: 0.0,
            // A longer filter window and shorter poll ceiling than the
            // stock client; tuned against the wireless preset.
            discipline: DisciplineConfig { window: 32, max_poll_s: 64, ..DisciplineConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncNode {
    pub node_id: NodeId,
    /// Clock model drawn for this node.
    pub clock: ClockState,
    /// Mean of (edge timestamp - true edge time) over the used edges, ms.
    pub mean_error_ms: Option<f64>,
    pub ntp: Option<NtpStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResults {
    pub p95_ms: Option<f64>,
    pub rmse_ms: Option<f64>,
    pub n_deviations: usize,
    pub edges_expected: u64,
    /// Edges whose timestamp reached the central node from every DuT.
    pub edges_used: u64,
    pub edges_missing: u64,
    pub nodes: Vec<SyncNode>,
    /// Empirical CDF decimated to at most 101 points.
    pub cdf: Vec<(f64, f64)>,
    #[serde(skip)]
    pub cdf_full: Vec<(f64, f64)>,
}

impl SyncResults {
    /// CSV with header `deviation_ms,cum_prob`, every sample when the full
    /// CDF is at hand.
    pub fn cdf_csv(&self) -> String {
        use core::fmt::Write;
        let rows = if self.cdf_full.is_empty() { &self.cdf } else { &self.cdf_full };
        let mut s = String::from("deviation_ms,cum_prob\n");
        for (v, p) in rows {
            let _ = writeln!(s, "{v},{p}");
        }
        s
    }
}

const CDF_POINTS: usize = 101;
const TAIL: Nanos = 10 * NS_PER_S;
const CHUNK: Nanos = 60 * NS_PER_S;

fn decimate(cdf: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if cdf.len() <= CDF_POINTS {
        return cdf.to_vec();
    }
    (0..CDF_POINTS).map(|i| cdf[i * (cdf.len() - 1) / (CDF_POINTS - 1)]).collect()
}

fn parse_edge(line: &str) -> Option<u64> {
    line.strip_prefix("EDGE,")?.parse().ok()
}

pub(super) fn run(
    seed: u64,
    link: LinkModel,
    p: &SyncParams,
    progress: &mut dyn FnMut(f64),
) -> Result<(Finished<SyncResults>, Nanos), CampaignError> {
    let edges = libm::floor(p.duration_s * p.edge_rate_hz) as u64;
    if p.n_nodes < 2 || edges == 0 {
        return Err(CampaignError::Empty);
    }
    if !(p.edge_rate_hz > 0.0) || !(p.warmup_s >= 0.0) {
        return Err(CampaignError::Invalid("edge rate must be positive and warmup non-negative".into()));
    }
    let mut clock_rng = rng::stream(seed, "campaign/clocks");
    let duts: Vec<DutSpec> = (1..=p.n_nodes)
        .map(|i| DutSpec { id: format!("dut{i}"), clock: p.clocks.draw(&mut clock_rng), mount: Mount::Unmounted })
        .collect();
    let mut link = link;
    link.asymmetry_ms += p.asymmetry_ms;
    let cfg = WorldConfig { seed, link, duts: duts.clone(), ntp: Some(p.discipline), ..WorldConfig::default() };
    let mut world = World::new(&cfg)?;

    let image = firmware(Behavior::GpioEcho, &[]);
    for d in &duts {
        bring_up(&mut world, &d.id, &image, None)?;
    }
    let ids: Vec<NodeId> = duts.iter().map(|d| NodeId::from(d.id.as_str())).collect();
    let period = secs(1.0 / p.edge_rate_hz);
    let start = secs(p.warmup_s).max(world.now() + NS_PER_S);
    world.schedule_edges(&ids, start, period, edges)?;

    let end = start + (edges - 1) as Nanos * period + TAIL;
    let mut seen: BTreeMap<u64, BTreeMap<NodeId, Nanos>> = BTreeMap::new();
    while world.now() < end {
        world.run_until((world.now() + CHUNK).min(end))?;
        for rec in world.take_logs() {
            if let Some(k) = parse_edge(&rec.line) {
                seen.entry(k).or_default().entry(rec.node_id).or_insert(rec.dut_timestamp);
            }
        }
        progress(world.now() as f64 / end as f64);
    }

    let complete: Vec<(u64, &BTreeMap<NodeId, Nanos>)> =
        seen.iter().filter(|(_, m)| m.len() == ids.len()).map(|(&k, m)| (k, m)).collect();
    let events: Vec<EdgeEvent> = complete
        .iter()
        .flat_map(|(k, m)| m.iter().map(move |(n, &t)| EdgeEvent { edge_index: *k, node_id: n.clone(), local_timestamp: t }))
        .collect();
    let summary = pairwise_deviations(&events).ok().and_then(|d| deviation_cdf(&d).ok());

    let nodes = duts
        .iter()
        .map(|d| {
            let errs: Vec<f64> = complete
                .iter()
                .filter_map(|(k, m)| m.get(d.id.as_str()).map(|&t| (t - (start + *k as Nanos * period)) as f64 / NS_PER_MS as f64))
                .collect();
            let mean = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            Ok(SyncNode { node_id: d.id.as_str().into(), clock: d.clock, mean_error_ms: mean, ntp: world.ntp_status(&d.id)? })
        })
        .collect::<Result<Vec<_>, CampaignError>>()?;

    let used = complete.len() as u64;
    let results = SyncResults {
        p95_ms: summary.as_ref().map(|s| s.p95_ms),
        rmse_ms: summary.as_ref().map(|s| s.rmse_ms),
        n_deviations: summary.as_ref().map_or(0, |s| s.n),
        edges_expected: edges,
        edges_used: used,
        edges_missing: edges - used.min(edges),
        nodes,
        cdf: summary.as_ref().map(|s| decimate(&s.cdf)).unwrap_or_default(),
        cdf_full: summary.map(|s| s.cdf).unwrap_or_default(),
    };
    let finished = if used == 0 {
        Finished::partial(results, "no edge was reported by every node".into())
    } else {
        Finished::complete(results)
    };
    Ok((finished, world.now()))
}
