use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::protocol::*;
use super::tickets::{ActionId, ActionKind, ActionTicket, Tickets};
use crate::dut::{self, Behavior, DeviceState, DutAgent, DutOutput, FirmwareImage, LogRecord};
use crate::env::{
    ActuatorNoise, AgvState, Arena, Goto, GotoConfig, GotoStatus, Odometry, Pose2D, Pose3D, RefSample, RefSys,
    RefSysConfig, DEFAULT_V_MAX, GOTO_ACTION, ODOM_TOPIC,
};
use crate::msgbus::{
    ActionOutcome, Bus, BusError, BusEvent, BusStats, CallError, LinkModel, LinkTable, NodeId, NodeInfo, NodeKind,
    QosProfile, SimTransport,
};
use crate::rng::{self, SimRng};
use crate::units::{secs, Nanos, NS_PER_MS, NS_PER_S};
use crate::uwb::{format_rng_line, BurstPlan, ChannelParams, ChannelUsage, RadioNode, UwbChannel};
use crate::vclock::{ClockBank, ClockError, ClockState, Discipline, DisciplineConfig, Scheduler, SyncSample};

pub const CENTRAL: &str = "central";
pub const AGV: &str = "agv";
pub const REFSYS: &str = "refsys";
/// Rigid body the reference system tracks on the AGV.
pub const AGV_BODY: &str = "agv";
pub const NTP_SERVICE: &str = "/ntp";

/// Give-up time for one NTP exchange.
const NTP_TIMEOUT: Nanos = NS_PER_S;
/// Give-up time for a DuT command round trip.
const COMMAND_TIMEOUT: Nanos = 5 * NS_PER_S;
/// Odometry is published every this many control ticks while driving.
const ODOM_EVERY: u64 = 10;
const GOTO_FEEDBACK_EVERY: u64 = 100;
const DEFAULT_SLOT_MS: f64 = 5.0;
const DEFAULT_EXCHANGES: u32 = 100;

/// Where a DuT's radio sits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mount {
    /// Not part of the radio scene.
    #[default]
    Unmounted,
    Fixed([f64; 3]),
    /// Rides on the AGV at this height.
    Agv { height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutSpec {
    pub id: String,
    #[serde(default)]
    pub clock: ClockState,
    #[serde(default)]
    pub mount: Mount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgvSpec {
    pub start: Pose2D,
    pub noise: ActuatorNoise,
    pub v_max: f64,
    pub goto: GotoConfig,
    pub arena: Arena,
}

impl Default for AgvSpec {
    fn default() -> Self {
        Self {
            start: Pose2D::new(3.0, 3.0, 0.0),
            noise: ActuatorNoise::default(),
            v_max: DEFAULT_V_MAX,
            goto: GotoConfig::default(),
            arena: Arena::default(),
        }
    }
}

/// Everything needed to build a [`World`]. Equal configs build worlds that
/// replay identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    /// Link between the central node and every other node.
    pub link: LinkModel,
    pub duts: Vec<DutSpec>,
    pub agv: Option<AgvSpec>,
    pub refsys: RefSysConfig,
    pub channel: ChannelParams,
    /// NTP discipline run by every DuT node; `None` disables polling.
    pub ntp: Option<DisciplineConfig>,
    pub log_qos: QosProfile,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            link: LinkModel::ideal(),
            duts: Vec::new(),
            agv: None,
            refsys: RefSysConfig::default(),
            channel: ChannelParams::default(),
            ntp: None,
            log_qos: QosProfile::log_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown action {0}")]
    UnknownAction(ActionId),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("no reply within the timeout")]
    Timeout,
    #[error("no AGV in this world")]
    NoAgv,
    #[error("nothing left to simulate")]
    Idle,
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Clock(#[from] ClockError),
}

impl From<CommandFault> for WorldError {
    fn from(f: CommandFault) -> Self {
        match f.kind {
            FaultKind::Conflict => WorldError::Conflict(f.message),
            FaultKind::Invalid => WorldError::Invalid(f.message),
        }
    }
}

/// Row of `GET /nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: NodeId,
    pub node_kind: NodeKind,
    pub endpoints: Vec<String>,
    pub alive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceState>,
}

/// Per-node NTP client figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpStatus {
    pub updates: u64,
    pub rejected: u64,
    pub timeouts: u64,
    pub poll_interval_s: u32,
    pub synced: bool,
}

#[derive(Debug)]
enum Ev {
    AgvTick { goal: u64 },
    NtpPoll(NodeId),
    Exchange { tag: NodeId, boot: u64 },
    Edges,
}

struct Burst {
    boot: u64,
    anchors: Vec<NodeId>,
    plan: BurstPlan,
    slot: Nanos,
}

struct NtpClient {
    discipline: Discipline,
    pending: Option<u64>,
    timeouts: u64,
}

struct DutSlot {
    agent: DutAgent,
    mount: Mount,
    drift_ppm: f64,
    flash_goal: Option<u64>,
    boot: u64,
    burst: Option<Burst>,
    ntp: Option<NtpClient>,
}

struct ActiveGoto {
    goal: u64,
    ctl: Goto,
    ticks: u64,
}

struct AgvSlot {
    state: AgvState,
    odom: Odometry,
    spec: AgvSpec,
    active: Option<ActiveGoto>,
}

/// The whole simulated testbed on one virtual timeline: the central node
/// with its registry, NTP server and action bookkeeping, the DuT nodes, the
/// AGV and reference system, and the UWB medium.
///
/// Sources are merged in time order; at equal instants the bus runs first,
/// then device timers, then scheduled world events.
pub struct World {
    sched: Scheduler<Ev>,
    bus: Bus<SimTransport>,
    clocks: ClockBank,
    duts: BTreeMap<NodeId, DutSlot>,
    agv: Option<AgvSlot>,
    refsys: RefSys,
    uwb: UwbChannel,
    env_rng: SimRng,
    query_rng: SimRng,
    log_qos: QosProfile,
    tickets: Tickets,
    goal_tickets: BTreeMap<u64, ActionId>,
    replies: BTreeMap<u64, Result<DutReply, WorldError>>,
    logs: VecDeque<LogRecord>,
    last_odom: Option<Odometry>,
    edge_nodes: Vec<NodeId>,
    now: Nanos,
}

fn hex_decode(s: &str) -> Result<Vec<u8>, WorldError> {
    hex::decode(s).map_err(|e| WorldError::Invalid(e.to_string()))
}

impl World {
    pub fn new(cfg: &WorldConfig) -> Result<Self, WorldError> {
        cfg.link.validate().map_err(|e| WorldError::Invalid(e.to_string()))?;
        cfg.channel.validate().map_err(|e| WorldError::Invalid(e.to_string()))?;
        // Forward is always central to node, so asymmetry has a direction.
        let mut links = LinkTable::new(cfg.link);
        for n in cfg.duts.iter().map(|d| d.id.as_str()).chain([AGV, REFSYS]) {
            links.set(CENTRAL.into(), n.into(), cfg.link);
        }
        links.set(AGV.into(), REFSYS.into(), LinkModel::ideal());
        let mut bus = Bus::new(SimTransport::new(links, rng::stream(cfg.seed, "transport")));
        let mut clocks = ClockBank::new(cfg.seed);

        bus.register_node(NodeInfo::new(CENTRAL, NodeKind::Central))?;
        bus.advertise_service(CENTRAL, NTP_SERVICE)?;
        clocks.add(CENTRAL.into(), ClockState::ideal())?;

        let mut duts = BTreeMap::new();
        for spec in &cfg.duts {
            let id = NodeId::new(spec.id.as_str());
            if duts.contains_key(&id) || matches!(spec.id.as_str(), CENTRAL | AGV | REFSYS) {
                return Err(BusError::DuplicateNode(id).into());
            }
            bus.register_node(NodeInfo::new(id.clone(), NodeKind::Dut))?;
            bus.advertise_topic(&spec.id, &dut::log_topic(&spec.id))?;
            bus.advertise_service(&spec.id, &dut_command_service(&spec.id))?;
            bus.advertise_action(&spec.id, &dut_flash_action(&spec.id))?;
            bus.subscribe(0, CENTRAL, &dut::log_topic(&spec.id), cfg.log_qos)?;
            clocks.add(id.clone(), spec.clock)?;
            let ntp = cfg.ntp.map(|c| NtpClient { discipline: Discipline::new(c), pending: None, timeouts: 0 });
            duts.insert(
                id.clone(),
                DutSlot {
                    agent: DutAgent::new(id),
                    mount: spec.mount,
                    drift_ppm: spec.clock.drift_ppm,
                    flash_goal: None,
                    boot: 0,
                    burst: None,
                    ntp,
                },
            );
        }

        let mut refsys = RefSys::new(cfg.refsys);
        let agv = match cfg.agv {
            Some(spec) => {
                bus.register_node(NodeInfo::new(AGV, NodeKind::Agv))?;
                bus.advertise_action(AGV, GOTO_ACTION)?;
                bus.advertise_topic(AGV, ODOM_TOPIC)?;
                bus.subscribe(0, CENTRAL, ODOM_TOPIC, QosProfile::best_effort())?;
                bus.register_node(NodeInfo::new(REFSYS, NodeKind::Refsys))?;
                refsys.register_body(AGV_BODY);
                Some(AgvSlot {
                    state: AgvState::new(spec.start).with_noise(spec.noise),
                    odom: Odometry { pose: spec.start },
                    spec,
                    active: None,
                })
            }
            None => None,
        };

        let mut w = Self {
            sched: Scheduler::new(),
            bus,
            clocks,
            duts,
            agv,
            refsys,
            uwb: UwbChannel::new(cfg.channel.clone(), rng::stream(cfg.seed, "uwb")),
            env_rng: rng::stream(cfg.seed, "env"),
            query_rng: rng::stream(cfg.seed, "query"),
            log_qos: cfg.log_qos,
            tickets: Tickets::default(),
            goal_tickets: BTreeMap::new(),
            replies: BTreeMap::new(),
            logs: VecDeque::new(),
            last_odom: None,
            edge_nodes: Vec::new(),
            now: 0,
        };
        if cfg.ntp.is_some() {
            let ids: Vec<NodeId> = w.duts.keys().cloned().collect();
            for id in ids {
                w.sched.schedule_at(0, Ev::NtpPoll(id));
            }
        }
        if w.agv.is_some() {
            w.publish_odom()?;
        }
        Ok(w)
    }

    /// Use a ticket table restored from a journal.
    pub fn with_tickets(mut self, tickets: Tickets) -> Self {
        self.tickets = tickets;
        self
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn bus_stats(&self) -> BusStats {
        self.bus.stats()
    }

    pub fn channel_usage(&self) -> ChannelUsage {
        self.uwb.usage()
    }

    pub fn dut_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.duts.keys()
    }

    // ---- time --------------------------------------------------------

    pub fn next_due(&self) -> Option<Nanos> {
        let duts = self.duts.values().filter_map(|d| d.agent.next_due()).min();
        [self.bus.next_due(), duts, self.sched.peek_time()].into_iter().flatten().min()
    }

    /// Process everything due at the earliest pending instant. Returns
    /// `false` once nothing is left.
    pub fn step(&mut self) -> Result<bool, WorldError> {
        let Some(t) = self.next_due() else { return Ok(false) };
        self.now = self.now.max(t);
        if self.bus.next_due().is_some_and(|b| b <= t) {
            for ev in self.bus.advance(t) {
                self.on_bus_event(ev)?;
            }
            return Ok(true);
        }
        let due: Vec<NodeId> =
            self.duts.iter().filter(|(_, d)| d.agent.next_due().is_some_and(|x| x <= t)).map(|(k, _)| k.clone()).collect();
        if !due.is_empty() {
            for id in due {
                let ts = self.clocks.now(id.as_str(), t)?;
                let out = self.slot_mut(id.as_str())?.agent.advance(t, ts);
                self.on_dut_outputs(&id, out)?;
            }
            return Ok(true);
        }
        if let Some((_, ev)) = self.sched.pop_until(t) {
            self.on_world_event(ev)?;
        }
        Ok(true)
    }

    /// Advance virtual time to `t`, processing every event due by then.
    pub fn run_until(&mut self, t: Nanos) -> Result<(), WorldError> {
        while self.next_due().is_some_and(|d| d <= t) {
            self.step()?;
        }
        self.now = self.now.max(t);
        self.sched.advance_to(self.now);
        Ok(())
    }

    pub fn run_for(&mut self, d: Nanos) -> Result<(), WorldError> {
        self.run_until(self.now + d)
    }

    /// Run until `done` holds or `timeout` of virtual time passes.
    pub fn run_while(&mut self, timeout: Nanos, mut done: impl FnMut(&Self) -> bool) -> Result<(), WorldError> {
        let end = self.now + timeout;
        while !done(self) {
            match self.next_due() {
                Some(t) if t <= end => {
                    self.step()?;
                }
                _ => {
                    self.run_until(end)?;
                    return if done(self) { Ok(()) } else { Err(WorldError::Timeout) };
                }
            }
        }
        Ok(())
    }

    // ---- central-side API --------------------------------------------

    fn slot(&self, id: &str) -> Result<&DutSlot, WorldError> {
        self.duts.get(id).ok_or_else(|| WorldError::UnknownNode(id.into()))
    }

    fn slot_mut(&mut self, id: &str) -> Result<&mut DutSlot, WorldError> {
        self.duts.get_mut(id).ok_or_else(|| WorldError::UnknownNode(id.into()))
    }

    pub fn nodes(&self) -> Vec<NodeSummary> {
        self.bus
            .registry()
            .all()
            .map(|n| NodeSummary {
                node_id: n.node_id.clone(),
                node_kind: n.node_kind,
                endpoints: n.endpoints.clone(),
                alive: self.bus.registry().is_alive(n.node_id.as_str()),
                device: self.duts.get(n.node_id.as_str()).map(|d| d.agent.state()),
            })
            .collect()
    }

    pub fn device_state(&self, id: &str) -> Result<DeviceState, WorldError> {
        Ok(self.slot(id)?.agent.state())
    }

    /// Send a command to a DuT node; the reply is collected with
    /// [`World::take_reply`] once the round trip completes.
    pub fn send_command(&mut self, id: &str, cmd: &DutCommand) -> Result<u64, WorldError> {
        self.slot(id)?;
        let body = crate::text::to_bytes(cmd).map_err(|e| WorldError::Invalid(e.to_string()))?;
        Ok(self.bus.call_service(self.now, CENTRAL, &dut_command_service(id), body, COMMAND_TIMEOUT, self.now)?)
    }

    pub fn take_reply(&mut self, call: u64) -> Option<Result<DutReply, WorldError>> {
        self.replies.remove(&call)
    }

    /// Command round trip in virtual time. A refused command is an error.
    pub fn command(&mut self, id: &str, cmd: &DutCommand) -> Result<DeviceState, WorldError> {
        let call = self.send_command(id, cmd)?;
        self.run_while(2 * COMMAND_TIMEOUT, |w| w.replies.contains_key(&call))?;
        let reply = self.take_reply(call).ok_or(WorldError::Timeout)??;
        match reply.fault {
            Some(f) => Err(f.into()),
            None => Ok(reply.state),
        }
    }

    pub fn start_flash(&mut self, id: &str, image: &FirmwareImage) -> Result<ActionId, WorldError> {
        let slot = self.slot(id)?;
        if slot.agent.is_flashing() || self.tickets.active(ActionKind::Flash, id).is_some() {
            return Err(WorldError::Conflict(alloc::format!("{id} is already flashing")));
        }
        let goal = FlashGoal { image_hex: hex::encode(image.encode()) };
        let body = crate::text::to_bytes(&goal).map_err(|e| WorldError::Invalid(e.to_string()))?;
        let corr = self.bus.start_action(self.now, CENTRAL, &dut_flash_action(id), body, self.now)?;
        let ticket = self.tickets.open(ActionKind::Flash, id);
        self.goal_tickets.insert(corr, ticket);
        Ok(ticket)
    }

    pub fn start_goto(&mut self, target: Pose2D) -> Result<ActionId, WorldError> {
        if self.agv.is_none() {
            return Err(WorldError::NoAgv);
        }
        if self.tickets.active(ActionKind::Goto, AGV).is_some() {
            return Err(WorldError::Conflict("a goto is already running".into()));
        }
        let body = crate::text::to_bytes(&target).map_err(|e| WorldError::Invalid(e.to_string()))?;
        let corr = self.bus.start_action(self.now, CENTRAL, GOTO_ACTION, body, self.now)?;
        let ticket = self.tickets.open(ActionKind::Goto, AGV);
        self.goal_tickets.insert(corr, ticket);
        Ok(ticket)
    }

    pub fn cancel_action(&mut self, id: ActionId) -> Result<(), WorldError> {
        let corr = self.goal_tickets.iter().find(|(_, &t)| t == id).map(|(&c, _)| c).ok_or(WorldError::UnknownAction(id))?;
        Ok(self.bus.cancel_action(self.now, CENTRAL, corr, self.now)?)
    }

    pub fn ticket(&self, id: ActionId) -> Option<&ActionTicket> {
        self.tickets.get(id)
    }

    pub fn tickets(&self) -> &Tickets {
        &self.tickets
    }

    pub fn drain_journal(&mut self) -> Vec<ActionTicket> {
        self.tickets.drain_journal()
    }

    /// Run until the ticket is terminal.
    pub fn wait_action(&mut self, id: ActionId, timeout: Nanos) -> Result<ActionTicket, WorldError> {
        self.ticket(id).ok_or(WorldError::UnknownAction(id))?;
        self.run_while(timeout, |w| w.ticket(id).is_some_and(|t| t.state.is_terminal()))?;
        self.ticket(id).cloned().ok_or(WorldError::UnknownAction(id))
    }

    /// Last odometry received over the bus.
    pub fn odometry(&self) -> Result<Odometry, WorldError> {
        self.last_odom.ok_or(WorldError::NoAgv)
    }

    /// Ground-truth AGV pose. Only the simulator knows it.
    pub fn agv_truth(&self) -> Result<Pose2D, WorldError> {
        self.agv.as_ref().map(|a| a.state.pose).ok_or(WorldError::NoAgv)
    }

    pub fn refsys_bodies(&self) -> Vec<String> {
        self.refsys.bodies().into_iter().map(String::from).collect()
    }

    /// One reference-system measurement of `body`.
    pub fn refsys_pose(&mut self, body: &str) -> Result<RefSample, WorldError> {
        let truth = self.body_truth(body)?;
        self.refsys.sample(body, &truth, self.now, &mut self.query_rng).map_err(|e| WorldError::UnknownNode(e.0))
    }

    fn body_truth(&self, body: &str) -> Result<Pose3D, WorldError> {
        match (body, &self.agv) {
            (AGV_BODY, Some(a)) => Ok(a.state.pose.lift(0.0)),
            _ => Err(WorldError::UnknownNode(body.into())),
        }
    }

    /// Log records received by the central node since the last call.
    pub fn take_logs(&mut self) -> Vec<LogRecord> {
        self.logs.drain(..).collect()
    }

    /// Fire `count` simultaneous GPIO edges at every listed node, one every
    /// `period`, starting at `start`.
    pub fn schedule_edges(&mut self, nodes: &[NodeId], start: Nanos, period: Nanos, count: u64) -> Result<(), WorldError> {
        for n in nodes {
            self.slot(n.as_str())?;
        }
        self.edge_nodes = nodes.to_vec();
        for k in 0..count {
            self.sched.schedule_at(start + k as Nanos * period, Ev::Edges);
        }
        Ok(())
    }

    /// True clock error of a node, ms (reading minus true time, without
    /// read jitter).
    pub fn clock_error_ms(&self, id: &str) -> Result<f64, WorldError> {
        Ok(self.clocks.get(id)?.error_ns(self.now) / NS_PER_MS as f64)
    }

    pub fn ntp_status(&self, id: &str) -> Result<Option<NtpStatus>, WorldError> {
        Ok(self.slot(id)?.ntp.as_ref().map(|c| NtpStatus {
            updates: c.discipline.updates(),
            rejected: c.discipline.rejected(),
            timeouts: c.timeouts,
            poll_interval_s: c.discipline.poll_interval_s(),
            synced: c.discipline.is_synced(),
        }))
    }

    // ---- event handling ----------------------------------------------

    fn on_bus_event(&mut self, ev: BusEvent) -> Result<(), WorldError> {
        match ev {
            BusEvent::Message { node, envelope, .. } if node.as_str() == CENTRAL => {
                if envelope.name == ODOM_TOPIC {
                    if let Ok(o) = crate::text::from_bytes::<Odometry>(&envelope.payload) {
                        self.last_odom = Some(o);
                    }
                } else if let Ok(rec) = crate::text::from_bytes::<LogRecord>(&envelope.payload) {
                    self.logs.push_back(rec);
                }
            }
            BusEvent::Message { .. } | BusEvent::DeadlineMissed { .. } => {}
            BusEvent::ServiceRequest { server, envelope } => {
                let corr = envelope.correlation_id;
                if server.as_str() == CENTRAL && envelope.name == NTP_SERVICE {
                    let Ok(req) = crate::text::from_bytes::<NtpRequest>(&envelope.payload) else { return Ok(()) };
                    let t2 = self.clocks.now(CENTRAL, self.now)?;
                    let resp = NtpResponse { t1: req.t1, t2, t3: t2 };
                    let body = crate::text::to_bytes(&resp).unwrap_or_default();
                    self.bus.respond(self.now, CENTRAL, corr, body, t2)?;
                } else if self.duts.contains_key(server.as_str()) {
                    let reply = self.execute(&server, &envelope.payload)?;
                    let body = crate::text::to_bytes(&reply).unwrap_or_default();
                    let ts = self.clocks.now(server.as_str(), self.now)?;
                    self.bus.respond(self.now, server.as_str(), corr, body, ts)?;
                }
            }
            BusEvent::ServiceResponse { client, correlation_id, result } => {
                if client.as_str() == CENTRAL {
                    let reply = match result {
                        Ok(body) => crate::text::from_bytes::<DutReply>(&body).map_err(|e| WorldError::Invalid(e.to_string())),
                        Err(CallError::Timeout) => Err(WorldError::Timeout),
                    };
                    self.replies.insert(correlation_id, reply);
                } else {
                    self.on_ntp_response(&client, correlation_id, result)?;
                }
            }
            BusEvent::ActionGoal { server, envelope } => {
                if server.as_str() == AGV {
                    self.on_goto_goal(envelope.correlation_id, &envelope.payload)?;
                } else {
                    self.on_flash_goal(&server, envelope.correlation_id, &envelope.payload)?;
                }
            }
            BusEvent::ActionAccepted { correlation_id, .. } => {
                if let Some(&t) = self.goal_tickets.get(&correlation_id) {
                    self.tickets.accepted(t);
                }
            }
            BusEvent::ActionFeedback { correlation_id, payload, .. } => {
                if let Some(&t) = self.goal_tickets.get(&correlation_id) {
                    if let Ok(f) = crate::text::from_bytes::<FlashFeedback>(&payload) {
                        self.tickets.progress(t, f.progress);
                    } else {
                        self.tickets.accepted(t);
                    }
                }
            }
            BusEvent::ActionResult { correlation_id, outcome, .. } => {
                if let Some(t) = self.goal_tickets.remove(&correlation_id) {
                    self.tickets.finish(t, &outcome);
                }
            }
            BusEvent::CancelRequested { server, correlation_id } => {
                if server.as_str() == AGV {
                    let agv = self.agv.as_mut().ok_or(WorldError::NoAgv)?;
                    if agv.active.as_ref().is_some_and(|g| g.goal == correlation_id) {
                        agv.active = None;
                        self.bus.action_result(self.now, AGV, correlation_id, &ActionOutcome::canceled(), self.now)?;
                    }
                } else {
                    let now = self.now;
                    let slot = self.slot_mut(server.as_str())?;
                    if slot.flash_goal == Some(correlation_id) && slot.agent.cancel_flash(now) {
                        slot.flash_goal = None;
                        let ts = self.clocks.now(server.as_str(), now)?;
                        self.bus.action_result(now, server.as_str(), correlation_id, &ActionOutcome::canceled(), ts)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn execute(&mut self, id: &NodeId, payload: &[u8]) -> Result<DutReply, WorldError> {
        let now = self.now;
        let ts = self.clocks.now(id.as_str(), now)?;
        let cmd = match crate::text::from_bytes::<DutCommand>(payload) {
            Ok(c) => c,
            Err(e) => {
                let state = self.slot(id.as_str())?.agent.state();
                return Ok(DutReply { state, fault: Some(CommandFault { kind: FaultKind::Invalid, message: e.to_string() }) });
            }
        };
        let agent = &mut self.slot_mut(id.as_str())?.agent;
        let mut outputs = Vec::new();
        let result: Result<(), CommandFault> = match cmd {
            DutCommand::State => Ok(()),
            DutCommand::Power { on } => {
                outputs = agent.set_power(now, ts, on);
                Ok(())
            }
            DutCommand::SerialConnect => agent.connect_serial().map_err(|e| (&e).into()),
            DutCommand::SerialDisconnect => {
                outputs = agent.disconnect_serial(ts);
                Ok(())
            }
            DutCommand::SetParams { params } => {
                // Validate everything before applying anything.
                let mut trial = agent.params().clone();
                let r = params.iter().try_for_each(|(k, v)| trial.set(k, v));
                r.map(|()| {
                    for (k, v) in &params {
                        let _ = agent.set_param(k, v);
                    }
                })
                .map_err(|e| (&e).into())
            }
            DutCommand::Reset => agent.reset(now, ts).map(|o| outputs = o).map_err(|e| (&e).into()),
            DutCommand::Erase => agent.erase().map_err(|e| (&e).into()),
            DutCommand::FlashWrite { addr, hex } => match hex_decode(&hex) {
                Ok(bytes) => agent.flash_write(addr as usize, &bytes).map_err(|e| (&e).into()),
                Err(e) => Err(CommandFault { kind: FaultKind::Invalid, message: e.to_string() }),
            },
        };
        let state = agent.state();
        self.on_dut_outputs(id, outputs)?;
        Ok(DutReply { state, fault: result.err() })
    }

    fn on_flash_goal(&mut self, id: &NodeId, corr: u64, payload: &[u8]) -> Result<(), WorldError> {
        let now = self.now;
        let ts = self.clocks.now(id.as_str(), now)?;
        let image = crate::text::from_bytes::<FlashGoal>(payload)
            .map_err(|e| e.to_string())
            .and_then(|g| hex::decode(g.image_hex).map_err(|e| e.to_string()))
            .and_then(|b| FirmwareImage::decode(&b).map_err(|e| e.to_string()));
        let slot = self.slot_mut(id.as_str())?;
        let started = image.and_then(|img| slot.agent.start_flash(now, img).map_err(|e| e.to_string()));
        match started {
            Ok(()) => {
                slot.flash_goal = Some(corr);
                self.bus.accept_goal(now, id.as_str(), corr, ts)?;
            }
            Err(reason) => self.bus.reject_goal(now, id.as_str(), corr, &reason, ts)?,
        }
        Ok(())
    }

    fn on_goto_goal(&mut self, corr: u64, payload: &[u8]) -> Result<(), WorldError> {
        let now = self.now;
        let agv = self.agv.as_mut().ok_or(WorldError::NoAgv)?;
        let target = match crate::text::from_bytes::<GotoGoal>(payload) {
            Ok(p) if !agv.spec.arena.contains(&p) => Err("target outside the arena".to_string()),
            Ok(p) => Ok(p),
            Err(e) => Err(e.to_string()),
        };
        let target = match (target, &agv.active) {
            (Ok(_), Some(_)) => Err("a goto is already running".to_string()),
            (t, _) => t,
        };
        match target {
            Ok(p) => {
                agv.active = Some(ActiveGoto { goal: corr, ctl: Goto::new(p, agv.spec.goto), ticks: 0 });
                let dt = secs(agv.spec.goto.dt);
                self.bus.accept_goal(now, AGV, corr, now)?;
                self.sched.schedule_at(now + dt, Ev::AgvTick { goal: corr });
            }
            Err(reason) => self.bus.reject_goal(now, AGV, corr, &reason, now)?,
        }
        Ok(())
    }

    fn on_dut_outputs(&mut self, id: &NodeId, outputs: Vec<DutOutput>) -> Result<(), WorldError> {
        let now = self.now;
        for out in outputs {
            match out {
                DutOutput::Log(rec) => self.publish_log(&rec)?,
                DutOutput::Booted(behavior) => {
                    let slot = self.slot_mut(id.as_str())?;
                    slot.boot += 1;
                    slot.burst = None;
                    if behavior == Behavior::Tag {
                        self.start_burst(id)?;
                    }
                }
                DutOutput::FlashProgress(p) => {
                    if let Some(corr) = self.slot(id.as_str())?.flash_goal {
                        let body = crate::text::to_bytes(&FlashFeedback { progress: p }).unwrap_or_default();
                        let ts = self.clocks.now(id.as_str(), now)?;
                        self.bus.action_feedback(now, id.as_str(), corr, body, ts)?;
                    }
                }
                DutOutput::FlashFinished(result) => {
                    if let Some(corr) = self.slot_mut(id.as_str())?.flash_goal.take() {
                        let outcome = match result {
                            Ok(()) => ActionOutcome::succeeded("flashed"),
                            Err(e) => ActionOutcome::failed(e.to_string()),
                        };
                        let ts = self.clocks.now(id.as_str(), now)?;
                        self.bus.action_result(now, id.as_str(), corr, &outcome, ts)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn publish_log(&mut self, rec: &LogRecord) -> Result<(), WorldError> {
        let body = crate::text::to_bytes(rec).map_err(|e| WorldError::Invalid(e.to_string()))?;
        let node = rec.node_id.as_str();
        self.bus.publish(self.now, node, &dut::log_topic(node), body, self.log_qos, rec.dut_timestamp)?;
        Ok(())
    }

    fn publish_odom(&mut self) -> Result<(), WorldError> {
        let agv = self.agv.as_ref().ok_or(WorldError::NoAgv)?;
        let body = crate::text::to_bytes(&agv.odom).map_err(|e| WorldError::Invalid(e.to_string()))?;
        self.bus.publish(self.now, AGV, ODOM_TOPIC, body, QosProfile::best_effort(), self.now)?;
        Ok(())
    }

    fn on_world_event(&mut self, ev: Ev) -> Result<(), WorldError> {
        match ev {
            Ev::AgvTick { goal } => self.agv_tick(goal),
            Ev::NtpPoll(id) => self.ntp_poll(&id),
            Ev::Exchange { tag, boot } => self.exchange(&tag, boot),
            Ev::Edges => {
                let nodes = self.edge_nodes.clone();
                for id in nodes {
                    let ts = self.clocks.now(id.as_str(), self.now)?;
                    if let Some(rec) = self.slot_mut(id.as_str())?.agent.gpio_edge(ts) {
                        self.publish_log(&rec)?;
                    }
                }
                Ok(())
            }
        }
    }

    fn agv_tick(&mut self, goal: u64) -> Result<(), WorldError> {
        let now = self.now;
        let agv = self.agv.as_mut().ok_or(WorldError::NoAgv)?;
        let Some(active) = agv.active.as_mut().filter(|g| g.goal == goal) else { return Ok(()) };
        let seen = self
            .refsys
            .sample(AGV_BODY, &agv.state.pose.lift(0.0), now, &mut self.env_rng)
            .map_err(|e| WorldError::UnknownNode(e.0))?
            .pose
            .flat();
        let (cmd, status) = active.ctl.tick(&seen, agv.spec.v_max);
        active.ticks += 1;
        let ticks = active.ticks;
        let target = active.ctl.target;
        match status {
            GotoStatus::Running => {
                let dt = agv.spec.goto.dt;
                agv.state.step(cmd, dt, &agv.spec.arena, &mut self.env_rng);
                agv.odom.integrate(cmd.v, cmd.omega, dt);
                self.sched.schedule_at(now + secs(dt), Ev::AgvTick { goal });
                if ticks % GOTO_FEEDBACK_EVERY == 0 {
                    let fb = GotoFeedback { distance_m: seen.distance(&target), yaw_error_deg: seen.yaw_error(&target) };
                    let body = crate::text::to_bytes(&fb).unwrap_or_default();
                    self.bus.action_feedback(now, AGV, goal, body, now)?;
                }
                if ticks % ODOM_EVERY == 0 {
                    self.publish_odom()?;
                }
            }
            GotoStatus::Arrived | GotoStatus::TimedOut => {
                agv.active = None;
                let outcome = if status == GotoStatus::Arrived {
                    ActionOutcome::succeeded(crate::text::to_text(&seen).unwrap_or_default())
                } else {
                    ActionOutcome::failed("timeout")
                };
                self.bus.action_result(now, AGV, goal, &outcome, now)?;
                self.publish_odom()?;
            }
        }
        Ok(())
    }

    fn ntp_poll(&mut self, id: &NodeId) -> Result<(), WorldError> {
        let now = self.now;
        let t1 = self.clocks.now(id.as_str(), now)?;
        let body = crate::text::to_bytes(&NtpRequest { t1 }).unwrap_or_default();
        let call = self.bus.call_service_datagram(now, id.as_str(), NTP_SERVICE, body, NTP_TIMEOUT, t1)?;
        // The next poll is booked when this exchange resolves, by response
        // or by timeout.
        if let Some(client) = self.slot_mut(id.as_str())?.ntp.as_mut() {
            client.pending = Some(call);
        }
        Ok(())
    }

    fn on_ntp_response(&mut self, id: &NodeId, call: u64, result: Result<Vec<u8>, CallError>) -> Result<(), WorldError> {
        let now = self.now;
        let t4 = self.clocks.now(id.as_str(), now)?;
        let Some(slot) = self.duts.get_mut(id.as_str()) else { return Ok(()) };
        let Some(client) = slot.ntp.as_mut().filter(|c| c.pending == Some(call)) else { return Ok(()) };
        client.pending = None;
        match result.ok().and_then(|b| crate::text::from_bytes::<NtpResponse>(&b).ok()) {
            Some(r) => {
                let sample = SyncSample::from_timestamps(r.t1, r.t2, r.t3, t4);
                let clock = self.clocks.get_mut(id.as_str())?;
                client.discipline.discipline_step(clock, &sample, now);
            }
            None => client.timeouts += 1,
        }
        let next = client.discipline.poll_interval();
        self.sched.schedule_at(now + next, Ev::NtpPoll(id.clone()));
        Ok(())
    }

    fn tag_slots(tag: &DutSlot) -> Option<(u32, Nanos)> {
        let m = tag.agent.manifest()?;
        let n = m.params.get("n_exchanges").and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_EXCHANGES);
        let slot_ms = m.params.get("slot_ms").and_then(|v| v.parse::<f64>().ok()).filter(|s| *s > 0.0).unwrap_or(DEFAULT_SLOT_MS);
        Some((n, crate::units::ms(slot_ms)))
    }

    /// A freshly booted tag starts one ranging burst over every anchor
    /// that is running at that moment.
    fn start_burst(&mut self, tag: &NodeId) -> Result<(), WorldError> {
        let anchors: Vec<NodeId> = self
            .duts
            .iter()
            .filter(|(k, d)| *k != tag && d.agent.behavior() == Some(Behavior::Anchor) && !matches!(d.mount, Mount::Unmounted))
            .map(|(k, _)| k.clone())
            .collect();
        let slot = self.slot_mut(tag.as_str())?;
        let Some((n, period)) = Self::tag_slots(slot) else { return Ok(()) };
        if anchors.is_empty() || n == 0 {
            return Ok(());
        }
        let boot = slot.boot;
        slot.burst = Some(Burst { boot, plan: BurstPlan::new(anchors.len(), n), anchors, slot: period });
        self.sched.schedule_in(period, Ev::Exchange { tag: tag.clone(), boot });
        Ok(())
    }

    fn radio(&self, id: &NodeId, behavior: Behavior) -> Option<RadioNode> {
        let slot = self.duts.get(id.as_str())?;
        let position = match slot.mount {
            Mount::Unmounted => return None,
            Mount::Fixed(p) => p,
            Mount::Agv { height } => {
                let pose = self.agv.as_ref()?.state.pose;
                [pose.x, pose.y, height]
            }
        };
        Some(RadioNode {
            id: slot.agent.device_label(),
            position,
            drift_ppm: slot.drift_ppm,
            active: slot.agent.is_powered() && slot.agent.behavior() == Some(behavior),
        })
    }

    fn exchange(&mut self, tag: &NodeId, boot: u64) -> Result<(), WorldError> {
        let now = self.now;
        let slot = self.slot_mut(tag.as_str())?;
        if slot.boot != boot {
            return Ok(());
        }
        if slot.agent.behavior() != Some(Behavior::Tag) {
            // Reset or powered down mid-burst.
            slot.burst = None;
            return Ok(());
        }
        let Some(burst) = slot.burst.as_mut().filter(|b| b.boot == boot) else { return Ok(()) };
        let Some((index, which)) = burst.plan.next() else {
            slot.burst = None;
            return Ok(());
        };
        let anchor_id = burst.anchors[which].clone();
        let period = burst.slot;
        let (Some(t), Some(a)) = (self.radio(tag, Behavior::Tag), self.radio(&anchor_id, Behavior::Anchor)) else {
            return Ok(());
        };
        let m = self.uwb.exchange(&t, &a, index);
        let ts = self.clocks.now(tag.as_str(), now)?;
        if let Some(rec) = self.slot_mut(tag.as_str())?.agent.log_line(ts, format_rng_line(&m)) {
            self.publish_log(&rec)?;
        }
        self.sched.schedule_at(now + period, Ev::Exchange { tag: tag.clone(), boot });
        Ok(())
    }
}
