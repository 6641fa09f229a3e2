use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::firmware::{crc32, Header, Manifest, HEADER_LEN};
use crate::text;

pub const FLASH_SIZE: usize = 64 * 1024;
/// Image header and manifest live here; the blob starts at 0.
pub const MANIFEST_ADDR: usize = 0xF000;
pub const DEVICE_ID_ADDR: usize = 0xFF00;
pub const ERASED: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlashError {
    #[error("write of {len} bytes at {addr:#06x} exceeds flash")]
    OutOfRange { addr: usize, len: usize },
    #[error("byte at {0:#06x} is not erased")]
    NotErased(usize),
}

/// NOR-style flash: erase sets bytes to 0xFF, writes can only clear bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flash(Vec<u8>);

impl Default for Flash {
    fn default() -> Self {
        Self(vec![ERASED; FLASH_SIZE])
    }
}

impl Flash {
    pub fn bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn erase_all(&mut self) {
        self.0.fill(ERASED);
    }

    pub fn erase_range(&mut self, range: Range<usize>) {
        self.0[range].fill(ERASED);
    }

    fn check(&self, addr: usize, len: usize) -> Result<Range<usize>, FlashError> {
        match addr.checked_add(len) {
            Some(end) if end <= FLASH_SIZE => Ok(addr..end),
            _ => Err(FlashError::OutOfRange { addr, len }),
        }
    }

    /// Program `data` at `addr`. Fails without modifying anything if any
    /// byte would need a bit set.
    pub fn write(&mut self, addr: usize, data: &[u8]) -> Result<(), FlashError> {
        let range = self.check(addr, data.len())?;
        if let Some(i) = self.0[range.clone()].iter().zip(data).position(|(&old, &new)| old & new != new) {
            return Err(FlashError::NotErased(addr + i));
        }
        for (old, &new) in self.0[range].iter_mut().zip(data) {
            *old &= new;
        }
        Ok(())
    }

    pub fn read(&self, addr: usize, len: usize) -> Result<&[u8], FlashError> {
        let range = self.check(addr, len)?;
        Ok(&self.0[range])
    }

    /// 4-byte little-endian id at 0xFF00; erased means unset.
    pub fn device_id(&self) -> Option<u32> {
        let b = &self.0[DEVICE_ID_ADDR..DEVICE_ID_ADDR + 4];
        let id = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        (id != u32::MAX).then_some(id)
    }

    /// Manifest of the stored image if header, blob checksum and manifest
    /// all check out.
    pub fn boot_manifest(&self) -> Option<Manifest> {
        let (head, rest) = Header::parse(&self.0[MANIFEST_ADDR..DEVICE_ID_ADDR]).ok()?;
        if head.blob_len > MANIFEST_ADDR || head.manifest_len > rest.len() {
            return None;
        }
        if crc32(&self.0[..head.blob_len]) != head.crc {
            return None;
        }
        text::from_bytes(&rest[..head.manifest_len]).ok()
    }
}

/// Largest manifest (with header) that fits its region.
pub const MAX_HEAD: usize = DEVICE_ID_ADDR - MANIFEST_ADDR;
pub const MAX_BLOB: usize = MANIFEST_ADDR;
const _: () = assert!(HEADER_LEN < MAX_HEAD);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn and_semantics() {
        let mut f = Flash::default();
        f.write(0x10, &[0xF0]).unwrap();
        f.write(0x10, &[0x30]).unwrap();
        assert_eq!(f.bytes()[0x10], 0x30);
        assert_eq!(f.write(0x10, &[0x0F]), Err(FlashError::NotErased(0x10)));
        assert_eq!(f.bytes()[0x10], 0x30);
    }

    #[test]
    fn range_checks() {
        let mut f = Flash::default();
        assert!(matches!(f.write(FLASH_SIZE - 1, &[0, 0]), Err(FlashError::OutOfRange { .. })));
        assert!(matches!(f.write(usize::MAX, &[0]), Err(FlashError::OutOfRange { .. })));
        f.write(FLASH_SIZE - 1, &[0]).unwrap();
    }

    #[test]
    fn device_id_round_trip() {
        let mut f = Flash::default();
        assert_eq!(f.device_id(), None);
        f.write(DEVICE_ID_ADDR, &7u32.to_le_bytes()).unwrap();
        assert_eq!(f.device_id(), Some(7));
        f.erase_all();
        assert_eq!(f.device_id(), None);
    }

    #[test]
    fn blank_flash_has_no_manifest() {
        assert_eq!(Flash::default().boot_manifest(), None);
    }
}
