//! DuT nodes: a management agent per simulated device with power, serial,
//! parameter, reset, erase, flash and flash-write controls.

mod agent;
mod firmware;
mod flash;

pub use agent::{
    DeviceState, DutAgent, DutError, DutOutput, LogRecord, Params, BOOT_DELAY, CHUNK_SIZE, CHUNK_TIME,
    DEFAULT_BAUDRATE, DEFAULT_SERIAL_PORT, FLASH_RATE_BPS,
};
pub use firmware::{crc32, Behavior, FirmwareError, FirmwareImage, Manifest, HEADER_LEN, MAGIC};
pub use flash::{Flash, FlashError, DEVICE_ID_ADDR, ERASED, FLASH_SIZE, MANIFEST_ADDR, MAX_BLOB, MAX_HEAD};

/// Topic carrying a device's log records.
pub fn log_topic(id: &str) -> alloc::string::String {
    alloc::format!("/dut/{id}/log")
}
