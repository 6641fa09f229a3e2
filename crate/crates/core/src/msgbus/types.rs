use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::num::NonZeroU32;

use serde::{Deserialize, Serialize};

use crate::units::Nanos;

/// Unique node name within a registry, e.g. `dut1` or `central`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl core::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Central,
    Dut,
    Agv,
    Refsys,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: NodeId,
    pub node_kind: NodeKind,
    /// Advertised topic, service and action names.
    pub endpoints: Vec<String>,
}

impl NodeInfo {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind) -> Self {
        Self { node_id: id.into(), node_kind: kind, endpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    TopicMsg,
    SvcReq,
    SvcResp,
    ActionGoal,
    ActionFeedback,
    ActionResult,
}

impl EnvelopeKind {
    pub fn needs_correlation(self) -> bool {
        !matches!(self, EnvelopeKind::TopicMsg)
    }
}

/// One bus message. `payload` is canonical structured text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub name: String,
    pub correlation_id: u64,
    pub sender: NodeId,
    /// Sender-clock timestamp at send.
    pub send_ts: Nanos,
    #[serde(with = "payload_text")]
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn payload_str(&self) -> &str {
        core::str::from_utf8(&self.payload).unwrap_or("")
    }
}

/// Payloads are UTF-8 text; carry them as strings so the envelope itself
/// stays readable structured text.
mod payload_text {
    use alloc::string::String;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match core::str::from_utf8(v) {
            Ok(text) => s.serialize_str(text),
            Err(_) => Err(serde::ser::Error::custom("payload is not UTF-8")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Reliable,
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosProfile {
    pub reliability: Reliability,
    /// Maximum tolerated inter-arrival gap, milliseconds.
    pub deadline_ms: Option<NonZeroU32>,
    pub history_depth: NonZeroU32,
}

impl QosProfile {
    pub const fn reliable(depth: u32) -> Self {
        Self {
            reliability: Reliability::Reliable,
            deadline_ms: None,
            history_depth: match NonZeroU32::new(depth) {
                Some(d) => d,
                None => NonZeroU32::MIN,
            },
        }
    }

    pub const fn best_effort() -> Self {
        Self { reliability: Reliability::BestEffort, deadline_ms: None, history_depth: NonZeroU32::MIN }
    }

    pub fn with_deadline_ms(mut self, ms: u32) -> Self {
        self.deadline_ms = NonZeroU32::new(ms);
        self
    }

    /// Profile of the DuT log topics.
    pub const fn log_default() -> Self {
        Self::reliable(1000)
    }
}

impl Default for QosProfile {
    fn default() -> Self {
        Self::reliable(10)
    }
}
