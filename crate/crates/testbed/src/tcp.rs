//! Bus transport over TCP for multi-process deployments.
//!
//! Each frame is a 4-byte big-endian length followed by one envelope as
//! canonical structured text. Every hosted node listens on its own socket,
//! so the receiving node is implied by the connection. TCP already orders
//! and retransmits, so the bus runs without its own acknowledgement layer.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread;

use testbed_core::msgbus::{Arrival, Channel, Envelope, EnvelopeKind, NodeId, Packet, SubscriptionId, Transport};
use testbed_core::text;
use testbed_core::units::Nanos;

/// Largest frame accepted; firmware images travel inside envelopes.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error(transparent)]
    Text(#[from] text::TextError),
}

pub fn encode_frame(env: &Envelope) -> Result<Vec<u8>, FrameError> {
    let body = text::to_bytes(env)?;
    if body.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Next frame from `r`; `None` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Envelope>, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(FrameError::Truncated),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })?;
    Ok(Some(text::from_bytes(&body)?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TcpStats {
    pub sent: u64,
    pub received: u64,
    /// Topic messages for which the receiving node has no subscription.
    pub unroutable: u64,
    /// Frames lost because the peer could not be reached.
    pub send_failures: u64,
}

type Routes = Arc<Mutex<BTreeMap<(NodeId, String), SubscriptionId>>>;
type Inbox = Arc<Mutex<VecDeque<Arrival>>>;

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

#[derive(Default)]
struct Counters {
    received: AtomicU64,
    unroutable: AtomicU64,
}

#[derive(Default)]
pub struct TcpTransport {
    hosted: BTreeMap<NodeId, SocketAddr>,
    peers: BTreeMap<NodeId, SocketAddr>,
    conns: BTreeMap<NodeId, TcpStream>,
    routes: Routes,
    inbox: Inbox,
    counters: Arc<Counters>,
    sent: u64,
    send_failures: u64,
}

/// Which channel an incoming envelope belongs to at node `to`.
fn route(routes: &Routes, to: &NodeId, env: &Envelope) -> Option<Channel> {
    match env.kind {
        EnvelopeKind::TopicMsg => lock(routes).get(&(to.clone(), env.name.clone())).map(|s| Channel::Topic(*s)),
        _ => Some(Channel::Control),
    }
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Listen for traffic addressed to `node`. Returns the bound address,
    /// useful when binding port 0.
    pub fn host(&mut self, node: impl Into<NodeId>, addr: impl ToSocketAddrs) -> io::Result<SocketAddr> {
        let node = node.into();
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let (routes, inbox, counters) = (self.routes.clone(), self.inbox.clone(), self.counters.clone());
        let to = node.clone();
        thread::Builder::new().name(format!("tcp-accept-{}", node.as_str())).spawn(move || {
            for stream in listener.incoming().flatten() {
                let (routes, inbox, counters, to) = (routes.clone(), inbox.clone(), counters.clone(), to.clone());
                thread::spawn(move || read_loop(stream, &to, &routes, &inbox, &counters));
            }
        })?;
        self.hosted.insert(node, local);
        Ok(local)
    }

    pub fn hosted_addr(&self, node: &str) -> Option<SocketAddr> {
        self.hosted.get(node).copied()
    }

    /// Where to send traffic for a node hosted elsewhere.
    pub fn peer(&mut self, node: impl Into<NodeId>, addr: SocketAddr) {
        let node = node.into();
        self.conns.remove(&node);
        self.peers.insert(node, addr);
    }

    /// Deliver topic messages named `topic` arriving for `node` to `sub`,
    /// the subscription the local bus returned.
    pub fn route_topic(&mut self, node: impl Into<NodeId>, topic: &str, sub: SubscriptionId) {
        lock(&self.routes).insert((node.into(), topic.to_string()), sub);
    }

    pub fn stats(&self) -> TcpStats {
        TcpStats {
            sent: self.sent,
            received: self.counters.received.load(Ordering::Relaxed),
            unroutable: self.counters.unroutable.load(Ordering::Relaxed),
            send_failures: self.send_failures,
        }
    }

    fn write_to(&mut self, to: &NodeId, frame: &[u8]) -> io::Result<()> {
        let addr = *self.peers.get(to).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no address for {to}")))?;
        if !self.conns.contains_key(to) {
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            self.conns.insert(to.clone(), s);
        }
        let conn = self.conns.get_mut(to).expect("connection just inserted");
        let r = conn.write_all(frame);
        if r.is_err() {
            self.conns.remove(to);
        }
        r
    }
}

fn read_loop(mut stream: TcpStream, to: &NodeId, routes: &Routes, inbox: &Inbox, counters: &Counters) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(env)) => {
                counters.received.fetch_add(1, Ordering::Relaxed);
                match route(routes, to, &env) {
                    Some(channel) => lock(inbox).push_back(Arrival {
                        from: env.sender.clone(),
                        to: to.clone(),
                        packet: Packet::Datagram { channel, envelope: env },
                    }),
                    None => {
                        counters.unroutable.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            Ok(None) => return,
            Err(e) => {
                log::warn!("tcp link to {to}: {e}");
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn is_reliable(&self) -> bool {
        true
    }

    fn send(&mut self, _now: Nanos, from: &NodeId, to: &NodeId, packet: Packet) {
        let env = match packet {
            Packet::Datagram { envelope, .. } | Packet::Data { envelope, .. } => envelope,
            // Never produced over a reliable transport.
            Packet::Ack { .. } => return,
        };
        debug_assert_eq!(&env.sender, from);
        if self.hosted.contains_key(to) {
            if let Some(channel) = route(&self.routes, to, &env) {
                lock(&self.inbox).push_back(Arrival { from: from.clone(), to: to.clone(), packet: Packet::Datagram { channel, envelope: env } });
            }
            return;
        }
        let frame = match encode_frame(&env) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("dropping envelope to {to}: {e}");
                self.send_failures += 1;
                return;
            }
        };
        match self.write_to(to, &frame) {
            Ok(()) => self.sent += 1,
            Err(e) => {
                log::warn!("send to {to}: {e}");
                self.send_failures += 1;
            }
        }
    }

    /// Received frames are due immediately.
    fn next_due(&self) -> Option<Nanos> {
        (!lock(&self.inbox).is_empty()).then_some(0)
    }

    fn poll(&mut self, _now: Nanos) -> Option<Arrival> {
        lock(&self.inbox).pop_front()
    }
}
