//! Payloads exchanged between the central node and the DuT, AGV and NTP
//! endpoints. All travel as canonical structured text.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::dut::{DeviceState, DutError};
use crate::env::Pose2D;
use crate::units::Nanos;

pub fn dut_command_service(id: &str) -> String {
    alloc::format!("/dut/{id}/cmd")
}

pub fn dut_flash_action(id: &str) -> String {
    alloc::format!("/dut/{id}/flash")
}

/// One request to a DuT node's command service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DutCommand {
    State,
    Power { on: bool },
    SerialConnect,
    SerialDisconnect,
    SetParams { params: BTreeMap<String, String> },
    Reset,
    Erase,
    /// Raw write of hex-encoded bytes at a flash address.
    FlashWrite { addr: u32, hex: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// The device is in a state that forbids the command.
    Conflict,
    /// The command itself is malformed or out of range.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct CommandFault {
    pub kind: FaultKind,
    pub message: String,
}

impl From<&DutError> for CommandFault {
    fn from(e: &DutError) -> Self {
        let kind = match e {
            DutError::PoweredOff | DutError::Busy | DutError::SerialDisconnected | DutError::PowerLost | DutError::Interrupted => {
                FaultKind::Conflict
            }
            DutError::ChecksumMismatch
            | DutError::ImageTooLarge
            | DutError::UnknownParam(_)
            | DutError::InvalidParam(_)
            | DutError::Flash(_) => FaultKind::Invalid,
        };
        Self { kind, message: alloc::string::ToString::to_string(e) }
    }
}

/// Reply of the command service: the device state after the command, and
/// the reason if it was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutReply {
    pub state: DeviceState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<CommandFault>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashGoal {
    /// The encoded firmware file, hex.
    pub image_hex: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashFeedback {
    pub progress: u8,
}

pub type GotoGoal = Pose2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GotoFeedback {
    pub distance_m: f64,
    pub yaw_error_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtpRequest {
    pub t1: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtpResponse {
    pub t1: Nanos,
    pub t2: Nanos,
    pub t3: Nanos,
}
