use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::firmware::{Behavior, FirmwareImage, Manifest};
use super::flash::{Flash, FlashError, DEVICE_ID_ADDR, MANIFEST_ADDR, MAX_BLOB, MAX_HEAD};
use crate::msgbus::NodeId;
use crate::units::{Nanos, NS_PER_MS, NS_PER_S};

pub const BOOT_DELAY: Nanos = 200 * NS_PER_MS;
pub const CHUNK_SIZE: usize = 4096;
pub const FLASH_RATE_BPS: i64 = 64 * 1024;
/// Time to program one chunk: 4 KiB at 64 KiB/s.
pub const CHUNK_TIME: Nanos = CHUNK_SIZE as i64 * NS_PER_S / FLASH_RATE_BPS;

pub const DEFAULT_SERIAL_PORT: &str = "/dev/ttyACM0";
pub const DEFAULT_BAUDRATE: u32 = 115_200;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DutError {
    #[error("device is powered off")]
    PoweredOff,
    #[error("a flash operation is already running")]
    Busy,
    #[error("firmware checksum mismatch")]
    ChecksumMismatch,
    #[error("firmware image too large")]
    ImageTooLarge,
    #[error("power lost while flashing")]
    PowerLost,
    #[error("flash interrupted by reset")]
    Interrupted,
    #[error("serial port not connected")]
    SerialDisconnected,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid value for {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Flash(#[from] FlashError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    pub serial_port: String,
    pub baudrate: u32,
}

impl Default for Params {
    fn default() -> Self {
        Self { serial_port: DEFAULT_SERIAL_PORT.into(), baudrate: DEFAULT_BAUDRATE }
    }
}

impl Params {
    pub fn get(&self, key: &str) -> Result<String, DutError> {
        match key {
            "serial_port" => Ok(self.serial_port.clone()),
            "baudrate" => Ok(self.baudrate.to_string()),
            _ => Err(DutError::UnknownParam(key.into())),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DutError> {
        match key {
            "serial_port" if !value.is_empty() => self.serial_port = value.into(),
            "baudrate" => {
                self.baudrate = value.parse().ok().filter(|&b| b > 0).ok_or_else(|| DutError::InvalidParam(key.into()))?;
            }
            "serial_port" => return Err(DutError::InvalidParam(key.into())),
            _ => return Err(DutError::UnknownParam(key.into())),
        }
        Ok(())
    }
}

/// One serial line, stamped on the DuT node's clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub node_id: NodeId,
    pub seq: u64,
    pub dut_timestamp: Nanos,
    pub line: String,
    /// Set on the last record of a logging session.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub end: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DutOutput {
    Log(LogRecord),
    Booted(Behavior),
    FlashProgress(u8),
    FlashFinished(Result<(), DutError>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Run {
    Off,
    Booting { until: Nanos },
    Flashing,
    Running(Manifest),
}

#[derive(Debug, Clone)]
struct FlashJob {
    image: FirmwareImage,
    chunks: usize,
    done: usize,
    next_at: Nanos,
}

/// Snapshot served to REST clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub power: bool,
    pub serial_connected: bool,
    pub logging: bool,
    pub flashing: bool,
    pub behavior: Option<Behavior>,
    pub device_id: Option<u32>,
    pub params: Params,
}

/// Management side of a DuT node paired with one simulated device.
///
/// Methods that may emit log lines take `ts`, the DuT node's clock reading
/// at `now`; the caller owns the clocks.
#[derive(Debug, Clone)]
pub struct DutAgent {
    id: NodeId,
    power: bool,
    serial_connected: bool,
    logging: bool,
    flash: Flash,
    params: Params,
    run: Run,
    job: Option<FlashJob>,
    seq: u64,
    edges: u64,
}

impl DutAgent {
    pub fn new(id: impl Into<NodeId>) -> Self {
        Self {
            id: id.into(),
            power: false,
            serial_connected: false,
            logging: false,
            flash: Flash::default(),
            params: Params::default(),
            run: Run::Off,
            job: None,
            seq: 0,
            edges: 0,
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn flash(&self) -> &Flash {
        &self.flash
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn is_powered(&self) -> bool {
        self.power
    }

    pub fn is_logging(&self) -> bool {
        self.logging
    }

    pub fn is_flashing(&self) -> bool {
        self.job.is_some()
    }

    pub fn behavior(&self) -> Option<Behavior> {
        match &self.run {
            Run::Running(m) => Some(m.behavior),
            _ => None,
        }
    }

    pub fn manifest(&self) -> Option<&Manifest> {
        match &self.run {
            Run::Running(m) => Some(m),
            _ => None,
        }
    }

    /// Id from flash, else the node name.
    pub fn device_label(&self) -> String {
        self.flash.device_id().map_or_else(|| self.id.to_string(), |id| id.to_string())
    }

    pub fn state(&self) -> DeviceState {
        DeviceState {
            power: self.power,
            serial_connected: self.serial_connected,
            logging: self.logging,
            flashing: self.is_flashing(),
            behavior: self.behavior(),
            device_id: self.flash.device_id(),
            params: self.params.clone(),
        }
    }

    fn record(&mut self, ts: Nanos, line: String, end: bool) -> Option<DutOutput> {
        if !self.logging {
            return None;
        }
        let rec = LogRecord { node_id: self.id.clone(), seq: self.seq, dut_timestamp: ts, line, end };
        self.seq += 1;
        Some(DutOutput::Log(rec))
    }

    /// Emit a line from the running firmware; dropped unless logging.
    pub fn log_line(&mut self, ts: Nanos, line: impl Into<String>) -> Option<LogRecord> {
        if self.behavior().is_none() {
            return None;
        }
        match self.record(ts, line.into(), false) {
            Some(DutOutput::Log(r)) => Some(r),
            _ => None,
        }
    }

    fn end_session(&mut self, ts: Nanos, out: &mut Vec<DutOutput>) {
        out.extend(self.record(ts, String::new(), true));
        self.seq = 0;
    }

    fn abort_job(&mut self, why: DutError, out: &mut Vec<DutOutput>) {
        if self.job.take().is_some() {
            // The manifest region was erased when the job started, so
            // whatever was written so far does not boot.
            out.push(DutOutput::FlashFinished(Err(why)));
        }
    }

    pub fn set_power(&mut self, now: Nanos, ts: Nanos, on: bool) -> Vec<DutOutput> {
        let mut out = Vec::new();
        match (self.power, on) {
            (false, true) => {
                self.power = true;
                self.run = Run::Booting { until: now + BOOT_DELAY };
            }
            (true, false) => {
                self.end_session(ts, &mut out);
                self.abort_job(DutError::PowerLost, &mut out);
                self.power = false;
                self.serial_connected = false;
                self.logging = false;
                self.run = Run::Off;
            }
            _ => {}
        }
        out
    }

    /// Open the serial port and start a logging session.
    pub fn connect_serial(&mut self) -> Result<(), DutError> {
        if !self.power {
            return Err(DutError::PoweredOff);
        }
        if !self.logging {
            self.seq = 0;
        }
        self.serial_connected = true;
        self.logging = true;
        Ok(())
    }

    pub fn disconnect_serial(&mut self, ts: Nanos) -> Vec<DutOutput> {
        let mut out = Vec::new();
        self.end_session(ts, &mut out);
        self.serial_connected = false;
        self.logging = false;
        out
    }

    pub fn reset(&mut self, now: Nanos, ts: Nanos) -> Result<Vec<DutOutput>, DutError> {
        if !self.power {
            return Err(DutError::PoweredOff);
        }
        let mut out = Vec::new();
        self.end_session(ts, &mut out);
        self.abort_job(DutError::Interrupted, &mut out);
        self.run = Run::Booting { until: now + BOOT_DELAY };
        Ok(out)
    }

    pub fn erase(&mut self) -> Result<(), DutError> {
        if !self.power {
            return Err(DutError::PoweredOff);
        }
        if self.job.is_some() {
            return Err(DutError::Busy);
        }
        self.flash.erase_all();
        Ok(())
    }

    pub fn flash_write(&mut self, addr: usize, data: &[u8]) -> Result<(), DutError> {
        if !self.power {
            return Err(DutError::PoweredOff);
        }
        if self.job.is_some() {
            return Err(DutError::Busy);
        }
        Ok(self.flash.write(addr, data)?)
    }

    pub fn get_param(&self, key: &str) -> Result<String, DutError> {
        self.params.get(key)
    }

    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), DutError> {
        self.params.set(key, value)
    }

    /// Number of progress steps a flash of `image` takes.
    pub fn chunk_count(image: &FirmwareImage) -> usize {
        image.blob.len().div_ceil(CHUNK_SIZE).max(1)
    }

    /// Validate and begin flashing. A rejected image leaves flash untouched.
    pub fn start_flash(&mut self, now: Nanos, image: FirmwareImage) -> Result<(), DutError> {
        if !self.power {
            return Err(DutError::PoweredOff);
        }
        if self.job.is_some() {
            return Err(DutError::Busy);
        }
        if !image.checksum_ok() {
            return Err(DutError::ChecksumMismatch);
        }
        if image.blob.len() > MAX_BLOB || image.head_bytes().len() > MAX_HEAD {
            return Err(DutError::ImageTooLarge);
        }
        self.flash.erase_range(0..DEVICE_ID_ADDR);
        self.run = Run::Flashing;
        let chunks = Self::chunk_count(&image);
        self.job = Some(FlashJob { image, chunks, done: 0, next_at: now + CHUNK_TIME });
        Ok(())
    }

    /// Abandon a running flash. The manifest region is already erased, so
    /// the device reboots into blank firmware.
    pub fn cancel_flash(&mut self, now: Nanos) -> bool {
        if self.job.take().is_none() {
            return false;
        }
        self.run = Run::Booting { until: now + BOOT_DELAY };
        true
    }

    /// A rising edge on the GPIO input.
    pub fn gpio_edge(&mut self, ts: Nanos) -> Option<LogRecord> {
        if self.behavior() != Some(Behavior::GpioEcho) {
            return None;
        }
        let n = self.edges;
        self.edges += 1;
        self.log_line(ts, format!("EDGE,{n}"))
    }

    pub fn next_due(&self) -> Option<Nanos> {
        let boot = match self.run {
            Run::Booting { until } => Some(until),
            _ => None,
        };
        let job = self.job.as_ref().map(|j| j.next_at);
        match (boot, job) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn advance(&mut self, now: Nanos, ts: Nanos) -> Vec<DutOutput> {
        let mut out = Vec::new();
        if let Some(job) = self.job.as_mut().filter(|j| j.next_at <= now) {
            let start = job.done * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(job.image.blob.len());
            let chunk = job.image.blob[start.min(end)..end].to_vec();
            job.done += 1;
            job.next_at += CHUNK_TIME;
            let pct = (job.done * 100 / job.chunks) as u8;
            let finished = job.done == job.chunks;
            let head = finished.then(|| job.image.head_bytes());
            let manifest = job.image.manifest.clone();
            // The region was erased at job start, so these writes cannot fail.
            let _ = self.flash.write(start, &chunk);
            out.push(DutOutput::FlashProgress(pct));
            if let Some(head) = head {
                let _ = self.flash.write(MANIFEST_ADDR, &head);
                debug_assert_eq!(self.flash.boot_manifest(), Some(manifest));
                self.job = None;
                out.push(DutOutput::FlashFinished(Ok(())));
                self.run = Run::Booting { until: now + BOOT_DELAY };
            }
        }
        if let Run::Booting { until } = self.run {
            if until <= now {
                let manifest = self.flash.boot_manifest().unwrap_or_else(|| Manifest::new(Behavior::Blank));
                let behavior = manifest.behavior;
                self.run = Run::Running(manifest);
                self.edges = 0;
                if self.logging {
                    self.seq = 0;
                }
                out.push(DutOutput::Booted(behavior));
                let banner = match behavior {
                    Behavior::Anchor => Some(format!("ANCHOR,{}", self.device_label())),
                    Behavior::Tag => Some(format!("TAG,{}", self.device_label())),
                    Behavior::GpioEcho | Behavior::Blank => None,
                };
                if let Some(line) = banner {
                    out.extend(self.log_line(ts, line).map(DutOutput::Log));
                }
            }
        }
        out
    }
}
