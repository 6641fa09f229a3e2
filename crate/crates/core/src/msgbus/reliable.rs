//! Sender and receiver halves of an acknowledged, retransmitting stream.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::types::Envelope;
use crate::units::{Nanos, NS_PER_MS, NS_PER_S};

pub const RETRANSMIT_BASE: Nanos = 50 * NS_PER_MS;
pub const RETRANSMIT_CAP: Nanos = NS_PER_S;

/// Delay before retransmission number `attempt` (0 = after first send).
pub fn backoff(attempt: u32) -> Nanos {
    if attempt >= 16 {
        return RETRANSMIT_CAP;
    }
    (RETRANSMIT_BASE << attempt).min(RETRANSMIT_CAP)
}

#[derive(Debug)]
pub(crate) struct TxStream {
    next_seq: u64,
    unacked: BTreeMap<u64, Envelope>,
    depth: usize,
}

impl TxStream {
    pub fn new(depth: usize) -> Self {
        Self { next_seq: 0, unacked: BTreeMap::new(), depth: depth.max(1) }
    }

    /// Queue an envelope; returns its sequence number and how many old
    /// entries were evicted to respect the history depth.
    pub fn push(&mut self, env: Envelope) -> (u64, usize) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.unacked.insert(seq, env);
        let mut evicted = 0;
        while self.unacked.len() > self.depth {
            self.unacked.pop_first();
            evicted += 1;
        }
        (seq, evicted)
    }

    pub fn get(&self, seq: u64) -> Option<&Envelope> {
        self.unacked.get(&seq)
    }

    pub fn ack(&mut self, seq: u64) -> bool {
        self.unacked.remove(&seq).is_some()
    }

    pub fn low_water(&self) -> u64 {
        self.unacked.first_key_value().map(|(k, _)| *k).unwrap_or(self.next_seq)
    }

    pub fn outstanding(&self) -> usize {
        self.unacked.len()
    }
}

#[derive(Debug, Default)]
pub(crate) struct RxStream {
    expected: u64,
    pending: BTreeMap<u64, Envelope>,
}

#[derive(Debug, Default, PartialEq)]
pub(crate) struct RxOutcome {
    pub delivered: Vec<Envelope>,
    pub duplicate: bool,
    /// Sequence numbers given up on because the sender evicted them.
    pub skipped: u64,
}

impl RxStream {
    pub fn receive(&mut self, seq: u64, low_water: u64, env: Envelope) -> RxOutcome {
        let mut out = RxOutcome::default();
        if seq < self.expected || self.pending.contains_key(&seq) {
            out.duplicate = true;
        } else {
            self.pending.insert(seq, env);
        }
        loop {
            if let Some(e) = self.pending.remove(&self.expected) {
                out.delivered.push(e);
                self.expected += 1;
            } else if self.expected < low_water {
                out.skipped += 1;
                self.expected += 1;
            } else {
                break;
            }
        }
        out
    }
}
