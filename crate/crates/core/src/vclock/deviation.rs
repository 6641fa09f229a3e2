//! Pairwise timestamp deviations between nodes that observed the same
//! edges, and their empirical distribution.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::msgbus::NodeId;
use crate::stats;
use crate::units::{Nanos, NS_PER_MS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub edge_index: u64,
    pub node_id: NodeId,
    pub local_timestamp: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeviationError {
    #[error("node {node} reported {got} edges, expected {expected}")]
    MismatchedEdges { node: NodeId, expected: usize, got: usize },
    #[error("node {node} repeats or reorders edge {edge}")]
    NonIncreasing { node: NodeId, edge: u64 },
    #[error("no deviations to summarize")]
    Empty,
}

/// `|t_a - t_b|` in milliseconds for every node pair on every edge.
///
/// Pairs are enumerated in node-id order, edges ascending, so the output
/// order is stable. E edges and N nodes yield `E * N * (N - 1) / 2` values.
pub fn pairwise_deviations(events: &[EdgeEvent]) -> Result<Vec<f64>, DeviationError> {
    let mut per_node: BTreeMap<&NodeId, Vec<(u64, Nanos)>> = BTreeMap::new();
    for e in events {
        let list = per_node.entry(&e.node_id).or_default();
        if let Some(&(last, _)) = list.last() {
            if e.edge_index <= last {
                return Err(DeviationError::NonIncreasing { node: e.node_id.clone(), edge: e.edge_index });
            }
        }
        list.push((e.edge_index, e.local_timestamp));
    }
    let mut nodes = per_node.into_iter();
    let Some((_, first)) = nodes.next() else {
        return Ok(Vec::new());
    };
    let reference: BTreeSet<u64> = first.iter().map(|&(i, _)| i).collect();
    let mut columns = alloc::vec![first];
    for (node, list) in nodes {
        let same = list.len() == reference.len() && list.iter().all(|(i, _)| reference.contains(i));
        if !same {
            return Err(DeviationError::MismatchedEdges { node: node.clone(), expected: reference.len(), got: list.len() });
        }
        columns.push(list);
    }

    let n = columns.len();
    let mut out = Vec::with_capacity(reference.len() * n * n.saturating_sub(1) / 2);
    for k in 0..reference.len() {
        for a in 0..n {
            for b in a + 1..n {
                let d = (columns[a][k].1 - columns[b][k].1).unsigned_abs();
                out.push(d as f64 / NS_PER_MS as f64);
            }
        }
    }
    Ok(out)
}

/// Empirical CDF plus the two headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub p95_ms: f64,
    pub rmse_ms: f64,
    pub n: usize,
    /// `(deviation_ms, cumulative probability)`, ascending.
    #[serde(skip)]
    pub cdf: Vec<(f64, f64)>,
}

impl DeviationSummary {
    /// CSV with header `deviation_ms,cum_prob`.
    pub fn cdf_csv(&self) -> alloc::string::String {
        use core::fmt::Write;
        let mut s = alloc::string::String::from("deviation_ms,cum_prob\n");
        for (v, p) in &self.cdf {
            let _ = writeln!(s, "{v},{p}");
        }
        s
    }
}

pub fn deviation_cdf(deviations: &[f64]) -> Result<DeviationSummary, DeviationError> {
    if deviations.is_empty() {
        return Err(DeviationError::Empty);
    }
    let sorted = stats::sorted(deviations);
    let n = sorted.len();
    let cdf = sorted.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n as f64)).collect();
    Ok(DeviationSummary {
        p95_ms: stats::nearest_rank(&sorted, 95).unwrap_or(0.0),
        rmse_ms: stats::rms(&sorted).unwrap_or(0.0),
        n,
        cdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ms;
    use alloc::format;

    fn ev(node: &str, i: u64, t: Nanos) -> EdgeEvent {
        EdgeEvent { edge_index: i, node_id: node.into(), local_timestamp: t }
    }

    #[test]
    fn identical_timestamps_give_zero() {
        let mut evs = Vec::new();
        for i in 0..5 {
            for n in ["a", "b", "c"] {
                evs.push(ev(n, i, 1000 * i as Nanos));
            }
        }
        let d = pairwise_deviations(&evs).unwrap();
        assert_eq!(d.len(), 15);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn four_nodes_thirty_minutes_at_one_hertz() {
        let mut evs = Vec::new();
        for n in 0..4 {
            for i in 0..1800 {
                evs.push(ev(&format!("dut{n}"), i, i as Nanos * 1_000_000_000));
            }
        }
        assert_eq!(pairwise_deviations(&evs).unwrap().len(), 10_800);
    }

    #[test]
    fn opposite_offsets_deviate_by_their_sum() {
        let evs: Vec<_> = (0..10).flat_map(|i| [ev("p", i, ms(1.0)), ev("m", i, ms(-1.0))]).collect();
        assert!(pairwise_deviations(&evs).unwrap().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn mismatched_edge_sets_are_rejected() {
        let evs = [ev("a", 0, 0), ev("a", 1, 0), ev("b", 0, 0)];
        assert!(matches!(pairwise_deviations(&evs), Err(DeviationError::MismatchedEdges { .. })));
        let evs = [ev("a", 1, 0), ev("a", 1, 0)];
        assert!(matches!(pairwise_deviations(&evs), Err(DeviationError::NonIncreasing { .. })));
    }

    #[test]
    fn cdf_percentile_and_rmse() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let s = deviation_cdf(&v).unwrap();
        assert_eq!(s.p95_ms, 95.0);
        assert_eq!(s.cdf.last(), Some(&(100.0, 1.0)));
        let z = deviation_cdf(&[0.0; 7]).unwrap();
        assert_eq!((z.p95_ms, z.rmse_ms), (0.0, 0.0));
        assert_eq!(deviation_cdf(&[]), Err(DeviationError::Empty));
    }
}
