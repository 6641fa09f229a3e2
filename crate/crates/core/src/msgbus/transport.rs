use alloc::collections::{BTreeMap, BinaryHeap};
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::link::{Direction, LinkModel};
use super::types::{Envelope, NodeId};
use crate::rng::SimRng;
use crate::units::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubscriptionId(pub u64);

/// Logical stream a packet belongs to: one per subscription for topic
/// data, one per node pair for service and action traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Topic(SubscriptionId),
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    /// Sequenced data on a retransmitting stream. `low_water` is the oldest
    /// sequence number the sender can still retransmit.
    Data { channel: Channel, seq: u64, low_water: u64, envelope: Envelope },
    Ack { channel: Channel, seq: u64 },
    /// Sent once, never acknowledged.
    Datagram { channel: Channel, envelope: Envelope },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub from: NodeId,
    pub to: NodeId,
    pub packet: Packet,
}

/// Moves packets between nodes. Implementations either model the network
/// (simulation) or wrap a real one (TCP). A reliable transport lets the bus
/// skip its own acknowledgement and retransmission layer.
pub trait Transport {
    fn is_reliable(&self) -> bool;

    fn send(&mut self, now: Nanos, from: &NodeId, to: &NodeId, packet: Packet);

    /// Time of the earliest pending arrival, if any.
    fn next_due(&self) -> Option<Nanos>;

    /// Next arrival due at or before `now`.
    fn poll(&mut self, now: Nanos) -> Option<Arrival>;
}

/// Per-pair link models. A pair stored as `(a, b)` is traversed forward
/// from `a` to `b` and backward from `b` to `a`.
#[derive(Debug, Clone, Default)]
pub struct LinkTable {
    default: LinkModel,
    links: BTreeMap<(NodeId, NodeId), LinkModel>,
}

impl LinkTable {
    pub fn new(default: LinkModel) -> Self {
        Self { default, links: BTreeMap::new() }
    }

    pub fn set(&mut self, a: NodeId, b: NodeId, model: LinkModel) {
        self.links.remove(&(b.clone(), a.clone()));
        self.links.insert((a, b), model);
    }

    pub fn set_default(&mut self, model: LinkModel) {
        self.default = model;
    }

    pub fn get(&self, from: &NodeId, to: &NodeId) -> (LinkModel, Direction) {
        if from == to {
            return (LinkModel::ideal(), Direction::Forward);
        }
        if let Some(m) = self.links.get(&(from.clone(), to.clone())) {
            return (*m, Direction::Forward);
        }
        if let Some(m) = self.links.get(&(to.clone(), from.clone())) {
            return (*m, Direction::Backward);
        }
        (self.default, Direction::Forward)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransportStats {
    pub sent: u64,
    pub lost: u64,
    pub delivered: u64,
}

struct InFlight {
    at: Nanos,
    seq: u64,
    arrival: Arrival,
}

impl PartialEq for InFlight {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for InFlight {}
impl PartialOrd for InFlight {
    fn partial_cmp(&self, o: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for InFlight {
    fn cmp(&self, o: &Self) -> core::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

/// In-process transport: every packet draws loss and delay from the link
/// model of its node pair and waits in a time-ordered queue.
pub struct SimTransport {
    pub links: LinkTable,
    rng: SimRng,
    seq: u64,
    queue: BinaryHeap<Reverse<InFlight>>,
    stats: TransportStats,
}

impl SimTransport {
    pub fn new(links: LinkTable, rng: SimRng) -> Self {
        Self { links, rng, seq: 0, queue: BinaryHeap::new(), stats: TransportStats::default() }
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

impl Transport for SimTransport {
    fn is_reliable(&self) -> bool {
        false
    }

    fn send(&mut self, now: Nanos, from: &NodeId, to: &NodeId, packet: Packet) {
        self.stats.sent += 1;
        let (model, dir) = self.links.get(from, to);
        let Some(delay) = model.sample(dir, &mut self.rng) else {
            self.stats.lost += 1;
            return;
        };
        self.seq += 1;
        self.queue.push(Reverse(InFlight {
            at: now + delay,
            seq: self.seq,
            arrival: Arrival { from: from.clone(), to: to.clone(), packet },
        }));
    }

    fn next_due(&self) -> Option<Nanos> {
        self.queue.peek().map(|Reverse(f)| f.at)
    }

    fn poll(&mut self, now: Nanos) -> Option<Arrival> {
        match self.queue.peek() {
            Some(Reverse(f)) if f.at <= now => {
                self.stats.delivered += 1;
                self.queue.pop().map(|Reverse(f)| f.arrival)
            }
            _ => None,
        }
    }
}
