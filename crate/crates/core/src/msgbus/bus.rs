use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::mem;

use serde::{Deserialize, Serialize};

use super::registry::{NodeHandle, Registry};
use super::reliable::{backoff, RxStream, TxStream};
use super::transport::{Arrival, Channel, Packet, SubscriptionId, Transport};
use super::types::{Envelope, EnvelopeKind, NodeId, NodeInfo, NodeKind, QosProfile, Reliability};
use super::BusError;
use crate::units::{Nanos, NS_PER_MS};
use crate::vclock::Scheduler;

const CONTROL_HISTORY: usize = 4096;
const CANCEL_SUFFIX: &str = "/_cancel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Succeeded,
    Failed,
    Canceled,
}

/// Terminal result of an action as carried in an `action_result` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub status: ActionStatus,
    pub detail: String,
}

impl ActionOutcome {
    pub fn succeeded(detail: impl Into<String>) -> Self {
        Self { status: ActionStatus::Succeeded, detail: detail.into() }
    }

    pub fn failed(detail: impl Into<String>) -> Self {
        Self { status: ActionStatus::Failed, detail: detail.into() }
    }

    pub fn canceled() -> Self {
        Self { status: ActionStatus::Canceled, detail: String::new() }
    }

    pub fn connection_lost() -> Self {
        Self::failed("connection_lost")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallError {
    Timeout,
}

/// Everything the bus hands back to the node that owns it.
#[derive(Debug, Clone, PartialEq)]
pub enum BusEvent {
    Message { node: NodeId, subscription: SubscriptionId, at: Nanos, envelope: Envelope },
    DeadlineMissed { node: NodeId, subscription: SubscriptionId, topic: String, at: Nanos },
    ServiceRequest { server: NodeId, envelope: Envelope },
    ServiceResponse { client: NodeId, correlation_id: u64, result: Result<Vec<u8>, CallError> },
    ActionGoal { server: NodeId, envelope: Envelope },
    ActionAccepted { client: NodeId, correlation_id: u64 },
    ActionFeedback { client: NodeId, correlation_id: u64, payload: Vec<u8> },
    ActionResult { client: NodeId, correlation_id: u64, outcome: ActionOutcome },
    CancelRequested { server: NodeId, correlation_id: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BusStats {
    pub published: u64,
    pub delivered: u64,
    pub retransmissions: u64,
    pub duplicates_suppressed: u64,
    pub history_overflow_drops: u64,
    pub gaps_skipped: u64,
    pub deadline_missed: u64,
    pub service_timeouts: u64,
    pub late_responses_discarded: u64,
}

type StreamKey = (NodeId, NodeId, Channel);

#[derive(Debug)]
enum Timer {
    Retransmit { key: StreamKey, seq: u64, attempt: u32 },
    CallTimeout { corr: u64 },
    Deadline { sub: SubscriptionId, generation: u64 },
}

#[derive(Debug)]
struct SubState {
    node: NodeId,
    topic: String,
    qos: QosProfile,
    generation: u64,
}

#[derive(Debug)]
struct PendingCall {
    client: NodeId,
}

#[derive(Debug)]
struct GoalState {
    client: NodeId,
    server: NodeId,
    name: String,
    cancel_requested: bool,
    terminal: bool,
}

#[derive(Debug)]
enum Inbound {
    Service { client: NodeId, datagram: bool },
    Goal { client: NodeId, name: String },
}

#[derive(Serialize, Deserialize)]
struct Acceptance {
    accepted: bool,
    reason: String,
}

/// Node registry plus topic, service and action routing over a transport.
///
/// The bus is a passive state machine: callers pass the current time into
/// every operation, drive it with [`Bus::advance`], and act on the returned
/// [`BusEvent`]s. Nothing inside sleeps or reads a clock.
pub struct Bus<T: Transport> {
    transport: T,
    registry: Registry,
    timers: Scheduler<Timer>,
    now: Nanos,
    subs: BTreeMap<SubscriptionId, SubState>,
    by_topic: BTreeMap<String, Vec<SubscriptionId>>,
    services: BTreeMap<String, NodeId>,
    actions: BTreeMap<String, NodeId>,
    tx: BTreeMap<StreamKey, TxStream>,
    rx: BTreeMap<StreamKey, RxStream>,
    calls: BTreeMap<u64, PendingCall>,
    goals: BTreeMap<u64, GoalState>,
    inbound: BTreeMap<u64, Inbound>,
    outbox: Vec<BusEvent>,
    next_corr: u64,
    next_sub: u64,
    stats: BusStats,
}

impl<T: Transport> Bus<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            registry: Registry::default(),
            timers: Scheduler::new(),
            now: 0,
            subs: BTreeMap::new(),
            by_topic: BTreeMap::new(),
            services: BTreeMap::new(),
            actions: BTreeMap::new(),
            tx: BTreeMap::new(),
            rx: BTreeMap::new(),
            calls: BTreeMap::new(),
            goals: BTreeMap::new(),
            inbound: BTreeMap::new(),
            outbox: Vec::new(),
            next_corr: 1,
            next_sub: 1,
            stats: BusStats::default(),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    /// Reliable messages sent but not yet acknowledged.
    pub fn unacked(&self) -> usize {
        self.tx.values().map(TxStream::outstanding).sum()
    }

    fn touch(&mut self, now: Nanos) {
        self.now = self.now.max(now);
        self.timers.advance_to(self.now);
    }

    // ---- registry ----------------------------------------------------

    pub fn register_node(&mut self, info: NodeInfo) -> Result<NodeHandle, BusError> {
        let endpoints = info.endpoints.clone();
        let handle = self.registry.register(NodeInfo { endpoints: Vec::new(), ..info })?;
        for e in endpoints {
            self.registry.add_endpoint(handle.id.as_str(), e)?;
        }
        Ok(handle)
    }

    pub fn discover(&self, kind: NodeKind) -> Vec<&NodeInfo> {
        self.registry.discover_kind(kind)
    }

    pub fn lookup(&self, id: &str) -> Option<&NodeInfo> {
        self.registry.lookup(id)
    }

    pub fn advertise_topic(&mut self, node: &str, topic: &str) -> Result<(), BusError> {
        self.registry.add_endpoint(node, topic.to_string())
    }

    pub fn advertise_service(&mut self, node: &str, name: &str) -> Result<(), BusError> {
        if self.services.get(name).is_some_and(|n| n.as_str() != node) {
            return Err(BusError::DuplicateEndpoint(name.to_string()));
        }
        self.registry.add_endpoint(node, name.to_string())?;
        self.services.insert(name.to_string(), node.into());
        Ok(())
    }

    pub fn advertise_action(&mut self, node: &str, name: &str) -> Result<(), BusError> {
        if self.actions.get(name).is_some_and(|n| n.as_str() != node) {
            return Err(BusError::DuplicateEndpoint(name.to_string()));
        }
        self.registry.add_endpoint(node, name.to_string())?;
        self.actions.insert(name.to_string(), node.into());
        Ok(())
    }

    /// Mark a node dead. Goals it was serving fail with `connection_lost`;
    /// traffic to it is dropped until [`Bus::revive_node`].
    pub fn crash_node(&mut self, now: Nanos, id: &str) -> Result<(), BusError> {
        self.touch(now);
        self.registry.set_alive(id, false)?;
        for (&corr, g) in self.goals.iter_mut() {
            if g.server.as_str() == id && !g.terminal {
                g.terminal = true;
                self.outbox.push(BusEvent::ActionResult {
                    client: g.client.clone(),
                    correlation_id: corr,
                    outcome: ActionOutcome::connection_lost(),
                });
            }
        }
        Ok(())
    }

    pub fn revive_node(&mut self, now: Nanos, id: &str) -> Result<(), BusError> {
        self.touch(now);
        self.registry.set_alive(id, true)
    }

    // ---- topics ------------------------------------------------------

    pub fn subscribe(&mut self, now: Nanos, node: &str, topic: &str, qos: QosProfile) -> Result<SubscriptionId, BusError> {
        self.touch(now);
        if self.registry.lookup(node).is_none() {
            return Err(BusError::UnknownNode(node.into()));
        }
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        self.subs.insert(id, SubState { node: node.into(), topic: topic.to_string(), qos, generation: 0 });
        self.by_topic.entry(topic.to_string()).or_default().push(id);
        if let Some(d) = qos.deadline_ms {
            self.timers.schedule_late_at(now + d.get() as Nanos * NS_PER_MS, Timer::Deadline { sub: id, generation: 0 });
        }
        Ok(id)
    }

    pub fn unsubscribe(&mut self, sub: SubscriptionId) {
        if let Some(s) = self.subs.remove(&sub) {
            if let Some(list) = self.by_topic.get_mut(&s.topic) {
                list.retain(|x| *x != sub);
            }
        }
    }

    pub fn subscribers(&self, topic: &str) -> usize {
        self.by_topic.get(topic).map_or(0, Vec::len)
    }

    pub fn publish(
        &mut self,
        now: Nanos,
        sender: &str,
        topic: &str,
        payload: Vec<u8>,
        qos: QosProfile,
        send_ts: Nanos,
    ) -> Result<(), BusError> {
        self.touch(now);
        if !self.registry.advertises(sender, topic) {
            return Err(BusError::NotAdvertised { node: sender.into(), name: topic.to_string() });
        }
        self.stats.published += 1;
        let env = Envelope {
            kind: EnvelopeKind::TopicMsg,
            name: topic.to_string(),
            correlation_id: 0,
            sender: sender.into(),
            send_ts,
            payload,
        };
        let targets: Vec<(SubscriptionId, NodeId, Reliability)> = self
            .by_topic
            .get(topic)
            .into_iter()
            .flatten()
            .filter_map(|id| self.subs.get(id).map(|s| (*id, s.node.clone(), s.qos.reliability)))
            .collect();
        let from = NodeId::from(sender);
        for (sub, node, sub_rel) in targets {
            if !self.registry.is_alive(node.as_str()) {
                continue;
            }
            let reliable = qos.reliability == Reliability::Reliable && sub_rel == Reliability::Reliable;
            let channel = Channel::Topic(sub);
            if reliable && !self.transport.is_reliable() {
                self.send_reliable((from.clone(), node, channel), env.clone(), qos.history_depth.get() as usize);
            } else {
                self.transport.send(self.now, &from, &node, Packet::Datagram { channel, envelope: env.clone() });
            }
        }
        Ok(())
    }

    // ---- services ----------------------------------------------------

    /// Send a request; the answer arrives later as a `ServiceResponse`
    /// event carrying the returned correlation id.
    pub fn call_service(
        &mut self,
        now: Nanos,
        client: &str,
        name: &str,
        request: Vec<u8>,
        timeout: Nanos,
        send_ts: Nanos,
    ) -> Result<u64, BusError> {
        self.touch(now);
        let server = self.services.get(name).cloned().ok_or_else(|| BusError::NoSuchService(name.to_string()))?;
        let corr = self.alloc_corr();
        self.calls.insert(corr, PendingCall { client: client.into() });
        self.timers.schedule_at(now + timeout.max(0), Timer::CallTimeout { corr });
        let env = Envelope {
            kind: EnvelopeKind::SvcReq,
            name: name.to_string(),
            correlation_id: corr,
            sender: client.into(),
            send_ts,
            payload: request,
        };
        self.send_control(client.into(), server, env);
        Ok(corr)
    }

    /// Like [`Bus::call_service`], but request and response travel as
    /// single unacknowledged datagrams. A lost leg surfaces as a timeout.
    pub fn call_service_datagram(
        &mut self,
        now: Nanos,
        client: &str,
        name: &str,
        request: Vec<u8>,
        timeout: Nanos,
        send_ts: Nanos,
    ) -> Result<u64, BusError> {
        self.touch(now);
        let server = self.services.get(name).cloned().ok_or_else(|| BusError::NoSuchService(name.to_string()))?;
        let corr = self.alloc_corr();
        self.calls.insert(corr, PendingCall { client: client.into() });
        self.timers.schedule_at(now + timeout.max(0), Timer::CallTimeout { corr });
        let env = Envelope {
            kind: EnvelopeKind::SvcReq,
            name: name.to_string(),
            correlation_id: corr,
            sender: client.into(),
            send_ts,
            payload: request,
        };
        self.transport.send(self.now, &NodeId::from(client), &server, Packet::Datagram { channel: Channel::Control, envelope: env });
        Ok(corr)
    }

    pub fn respond(&mut self, now: Nanos, server: &str, corr: u64, response: Vec<u8>, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        let Some(Inbound::Service { client, datagram }) = self.inbound.remove(&corr) else {
            return Err(BusError::UnknownCorrelation(corr));
        };
        let env = Envelope {
            kind: EnvelopeKind::SvcResp,
            name: String::new(),
            correlation_id: corr,
            sender: server.into(),
            send_ts,
            payload: response,
        };
        if datagram {
            let packet = Packet::Datagram { channel: Channel::Control, envelope: env };
            self.transport.send(self.now, &NodeId::from(server), &client, packet);
        } else {
            self.send_control(server.into(), client, env);
        }
        Ok(())
    }

    // ---- actions -----------------------------------------------------

    pub fn start_action(&mut self, now: Nanos, client: &str, name: &str, goal: Vec<u8>, send_ts: Nanos) -> Result<u64, BusError> {
        self.touch(now);
        let server = self.actions.get(name).cloned().ok_or_else(|| BusError::NoSuchAction(name.to_string()))?;
        if !self.registry.is_alive(server.as_str()) {
            return Err(BusError::NodeDown(server));
        }
        let corr = self.alloc_corr();
        self.goals.insert(
            corr,
            GoalState {
                client: client.into(),
                server: server.clone(),
                name: name.to_string(),
                cancel_requested: false,
                terminal: false,
            },
        );
        let env = Envelope {
            kind: EnvelopeKind::ActionGoal,
            name: name.to_string(),
            correlation_id: corr,
            sender: client.into(),
            send_ts,
            payload: goal,
        };
        self.send_control(client.into(), server, env);
        Ok(corr)
    }

    fn goal_reply(&mut self, server: &str, corr: u64, kind: EnvelopeKind, payload: Vec<u8>, send_ts: Nanos) -> Result<(), BusError> {
        let Some(Inbound::Goal { client, name }) = self.inbound.get(&corr) else {
            return Err(BusError::UnknownCorrelation(corr));
        };
        let (client, name) = (client.clone(), name.clone());
        let env = Envelope { kind, name, correlation_id: corr, sender: server.into(), send_ts, payload };
        self.send_control(server.into(), client, env);
        Ok(())
    }

    pub fn accept_goal(&mut self, now: Nanos, server: &str, corr: u64, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        let body = crate::text::to_bytes(&Acceptance { accepted: true, reason: String::new() }).unwrap_or_default();
        self.goal_reply(server, corr, EnvelopeKind::SvcResp, body, send_ts)
    }

    /// Refuse a goal; the client sees a failed result with `reason`.
    pub fn reject_goal(&mut self, now: Nanos, server: &str, corr: u64, reason: &str, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        let body = crate::text::to_bytes(&Acceptance { accepted: false, reason: reason.to_string() }).unwrap_or_default();
        self.goal_reply(server, corr, EnvelopeKind::SvcResp, body, send_ts)?;
        self.inbound.remove(&corr);
        Ok(())
    }

    pub fn action_feedback(&mut self, now: Nanos, server: &str, corr: u64, payload: Vec<u8>, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        self.goal_reply(server, corr, EnvelopeKind::ActionFeedback, payload, send_ts)
    }

    pub fn action_result(&mut self, now: Nanos, server: &str, corr: u64, outcome: &ActionOutcome, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        let body = crate::text::to_bytes(outcome).unwrap_or_default();
        self.goal_reply(server, corr, EnvelopeKind::ActionResult, body, send_ts)?;
        self.inbound.remove(&corr);
        Ok(())
    }

    /// Ask the server to cancel. Feedback arriving afterwards is dropped;
    /// the goal still ends with exactly one result.
    pub fn cancel_action(&mut self, now: Nanos, client: &str, corr: u64, send_ts: Nanos) -> Result<(), BusError> {
        self.touch(now);
        let g = self.goals.get_mut(&corr).ok_or(BusError::UnknownCorrelation(corr))?;
        if g.terminal || g.cancel_requested {
            return Ok(());
        }
        g.cancel_requested = true;
        let env = Envelope {
            kind: EnvelopeKind::SvcReq,
            name: alloc::format!("{}{CANCEL_SUFFIX}", g.name),
            correlation_id: corr,
            sender: client.into(),
            send_ts,
            payload: Vec::new(),
        };
        let server = g.server.clone();
        self.send_control(client.into(), server, env);
        Ok(())
    }

    /// Goals the client has not yet seen a result for.
    pub fn open_goals(&self) -> usize {
        self.goals.values().filter(|g| !g.terminal).count()
    }

    // ---- driving -----------------------------------------------------

    pub fn next_due(&self) -> Option<Nanos> {
        if !self.outbox.is_empty() {
            return Some(self.now);
        }
        match (self.transport.next_due(), self.timers.peek_time()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Process every arrival and timer due at or before `now`, in time
    /// order (arrivals before timers at equal instants).
    pub fn advance(&mut self, now: Nanos) -> Vec<BusEvent> {
        let mut out = mem::take(&mut self.outbox);
        loop {
            let ta = self.transport.next_due().filter(|&t| t <= now);
            let tt = self.timers.peek_time().filter(|&t| t <= now);
            match (ta, tt) {
                (Some(a), b) if b.is_none_or(|b| a <= b) => {
                    self.touch(a);
                    if let Some(arrival) = self.transport.poll(a) {
                        self.on_arrival(arrival, &mut out);
                    }
                }
                (_, Some(_)) => {
                    if let Some((t, timer)) = self.timers.pop() {
                        self.now = self.now.max(t);
                        self.on_timer(timer, &mut out);
                    }
                }
                (None, None) => break,
                _ => unreachable!(),
            }
        }
        self.touch(now);
        out
    }

    // ---- internals ---------------------------------------------------

    fn alloc_corr(&mut self) -> u64 {
        let c = self.next_corr;
        self.next_corr += 1;
        c
    }

    fn send_control(&mut self, from: NodeId, to: NodeId, env: Envelope) {
        if self.transport.is_reliable() {
            self.transport.send(self.now, &from, &to, Packet::Datagram { channel: Channel::Control, envelope: env });
        } else {
            self.send_reliable((from, to, Channel::Control), env, CONTROL_HISTORY);
        }
    }

    fn send_reliable(&mut self, key: StreamKey, env: Envelope, depth: usize) {
        let stream = self.tx.entry(key.clone()).or_insert_with(|| TxStream::new(depth));
        let (seq, evicted) = stream.push(env);
        if evicted > 0 {
            self.stats.history_overflow_drops += evicted as u64;
            log::warn!("history depth {depth} exceeded on {} -> {}: dropped {evicted} oldest", key.0, key.1);
        }
        self.transmit(key, seq, 0);
    }

    fn transmit(&mut self, key: StreamKey, seq: u64, attempt: u32) {
        let Some(stream) = self.tx.get(&key) else { return };
        let Some(env) = stream.get(seq) else { return };
        let packet = Packet::Data { channel: key.2, seq, low_water: stream.low_water(), envelope: env.clone() };
        self.transport.send(self.now, &key.0, &key.1, packet);
        self.timers.schedule_at(self.now + backoff(attempt), Timer::Retransmit { key, seq, attempt });
    }

    fn on_timer(&mut self, timer: Timer, out: &mut Vec<BusEvent>) {
        match timer {
            Timer::Retransmit { key, seq, attempt } => {
                let pending = self.tx.get(&key).is_some_and(|s| s.get(seq).is_some());
                if pending && self.registry.is_alive(key.1.as_str()) && self.registry.is_alive(key.0.as_str()) {
                    self.stats.retransmissions += 1;
                    self.transmit(key, seq, attempt + 1);
                }
            }
            Timer::CallTimeout { corr } => {
                if let Some(call) = self.calls.remove(&corr) {
                    self.stats.service_timeouts += 1;
                    out.push(BusEvent::ServiceResponse { client: call.client, correlation_id: corr, result: Err(CallError::Timeout) });
                }
            }
            Timer::Deadline { sub, generation } => {
                let Some(s) = self.subs.get(&sub) else { return };
                if s.generation != generation {
                    return;
                }
                let Some(d) = s.qos.deadline_ms else { return };
                self.stats.deadline_missed += 1;
                out.push(BusEvent::DeadlineMissed { node: s.node.clone(), subscription: sub, topic: s.topic.clone(), at: self.now });
                self.timers.schedule_late_at(self.now + d.get() as Nanos * NS_PER_MS, Timer::Deadline { sub, generation });
            }
        }
    }

    fn on_arrival(&mut self, arrival: Arrival, out: &mut Vec<BusEvent>) {
        let Arrival { from, to, packet } = arrival;
        if !self.registry.is_alive(to.as_str()) {
            return;
        }
        match packet {
            Packet::Ack { channel, seq } => {
                // Acks travel receiver → sender, so the stream key is reversed.
                if let Some(s) = self.tx.get_mut(&(to, from, channel)) {
                    s.ack(seq);
                }
            }
            Packet::Data { channel, seq, low_water, envelope } => {
                self.transport.send(self.now, &to, &from, Packet::Ack { channel, seq });
                let key = (from, to, channel);
                let outcome = self.rx.entry(key.clone()).or_default().receive(seq, low_water, envelope);
                if outcome.duplicate {
                    self.stats.duplicates_suppressed += 1;
                }
                self.stats.gaps_skipped += outcome.skipped;
                for env in outcome.delivered {
                    self.dispatch(&key.1, channel, env, false, out);
                }
            }
            Packet::Datagram { channel, envelope } => {
                let datagram = !self.transport.is_reliable();
                self.dispatch(&to, channel, envelope, datagram, out)
            }
        }
    }

    fn dispatch(&mut self, to: &NodeId, channel: Channel, env: Envelope, datagram: bool, out: &mut Vec<BusEvent>) {
        match channel {
            Channel::Topic(sub) => self.deliver_topic(sub, env, out),
            Channel::Control => self.deliver_control(to, env, datagram, out),
        }
    }

    fn deliver_topic(&mut self, sub: SubscriptionId, env: Envelope, out: &mut Vec<BusEvent>) {
        let now = self.now;
        let Some(s) = self.subs.get_mut(&sub) else { return };
        s.generation += 1;
        if let Some(d) = s.qos.deadline_ms {
            let generation = s.generation;
            self.timers.schedule_late_at(now + d.get() as Nanos * NS_PER_MS, Timer::Deadline { sub, generation });
        }
        self.stats.delivered += 1;
        out.push(BusEvent::Message { node: s.node.clone(), subscription: sub, at: now, envelope: env });
    }

    fn deliver_control(&mut self, to: &NodeId, env: Envelope, datagram: bool, out: &mut Vec<BusEvent>) {
        let corr = env.correlation_id;
        match env.kind {
            EnvelopeKind::SvcReq if env.name.ends_with(CANCEL_SUFFIX) => {
                if matches!(self.inbound.get(&corr), Some(Inbound::Goal { .. })) {
                    out.push(BusEvent::CancelRequested { server: to.clone(), correlation_id: corr });
                }
            }
            EnvelopeKind::SvcReq => {
                self.inbound.insert(corr, Inbound::Service { client: env.sender.clone(), datagram });
                out.push(BusEvent::ServiceRequest { server: to.clone(), envelope: env });
            }
            EnvelopeKind::ActionGoal => {
                self.inbound.insert(corr, Inbound::Goal { client: env.sender.clone(), name: env.name.clone() });
                out.push(BusEvent::ActionGoal { server: to.clone(), envelope: env });
            }
            EnvelopeKind::SvcResp => {
                if let Some(g) = self.goals.get_mut(&corr) {
                    if g.terminal {
                        return;
                    }
                    match crate::text::from_bytes::<Acceptance>(&env.payload) {
                        Ok(a) if a.accepted => out.push(BusEvent::ActionAccepted { client: g.client.clone(), correlation_id: corr }),
                        Ok(a) => {
                            g.terminal = true;
                            out.push(BusEvent::ActionResult {
                                client: g.client.clone(),
                                correlation_id: corr,
                                outcome: ActionOutcome::failed(a.reason),
                            });
                        }
                        Err(_) => {}
                    }
                } else if let Some(call) = self.calls.remove(&corr) {
                    out.push(BusEvent::ServiceResponse { client: call.client, correlation_id: corr, result: Ok(env.payload) });
                } else {
                    self.stats.late_responses_discarded += 1;
                    log::debug!("discarding late response for call {corr}");
                }
            }
            EnvelopeKind::ActionFeedback => {
                if let Some(g) = self.goals.get(&corr) {
                    if !g.terminal && !g.cancel_requested {
                        out.push(BusEvent::ActionFeedback { client: g.client.clone(), correlation_id: corr, payload: env.payload });
                    }
                }
            }
            EnvelopeKind::ActionResult => {
                if let Some(g) = self.goals.get_mut(&corr) {
                    if g.terminal {
                        return;
                    }
                    g.terminal = true;
                    let outcome = crate::text::from_bytes(&env.payload).unwrap_or_else(|_| ActionOutcome::failed("malformed result"));
                    out.push(BusEvent::ActionResult { client: g.client.clone(), correlation_id: corr, outcome });
                }
            }
            EnvelopeKind::TopicMsg => {}
        }
    }
}
