use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text;

pub const MAGIC: [u8; 4] = *b"FWIM";
pub const HEADER_LEN: usize = 16;

/// Behavior a device boots into; selects an in-process simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Anchor,
    Tag,
    GpioEcho,
    Blank,
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Anchor => "anchor",
            Behavior::Tag => "tag",
            Behavior::GpioEcho => "gpio_echo",
            Behavior::Blank => "blank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub behavior: Behavior,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(behavior: Behavior) -> Self {
        Self { behavior, params: BTreeMap::new() }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FirmwareError {
    #[error("image shorter than its header")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("declared lengths do not match the file size")]
    LengthMismatch,
    #[error("manifest: {0}")]
    Manifest(#[from] text::TextError),
}

/// Manifest plus opaque blob. `checksum` is what the file claims, which is
/// not necessarily what the blob hashes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareImage {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
    pub checksum: u32,
}

pub fn crc32(data: &[u8]) -> u32 {
    crc32fast::hash(data)
}

impl FirmwareImage {
    pub fn new(manifest: Manifest, blob: Vec<u8>) -> Self {
        let checksum = crc32(&blob);
        Self { manifest, blob, checksum }
    }

    pub fn checksum_ok(&self) -> bool {
        crc32(&self.blob) == self.checksum
    }

    fn header(&self, manifest_len: usize) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&(manifest_len as u32).to_le_bytes());
        h[8..12].copy_from_slice(&(self.blob.len() as u32).to_le_bytes());
        h[12..].copy_from_slice(&self.checksum.to_le_bytes());
        h
    }

    /// Header followed by the manifest, without the blob.
    pub fn head_bytes(&self) -> Vec<u8> {
        let manifest = text::to_bytes(&self.manifest).unwrap_or_default();
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len());
        out.extend_from_slice(&self.header(manifest.len()));
        out.extend_from_slice(&manifest);
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.head_bytes();
        out.extend_from_slice(&self.blob);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FirmwareError> {
        let (head, rest) = Header::parse(bytes)?;
        if rest.len() != head.manifest_len + head.blob_len {
            return Err(FirmwareError::LengthMismatch);
        }
        let (manifest, blob) = rest.split_at(head.manifest_len);
        Ok(Self { manifest: text::from_bytes(manifest)?, blob: blob.to_vec(), checksum: head.crc })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub manifest_len: usize,
    pub blob_len: usize,
    pub crc: u32,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<(Header, &[u8]), FirmwareError> {
        if bytes.len() < HEADER_LEN {
            return Err(FirmwareError::Truncated);
        }
        if bytes[..4] != MAGIC {
            return Err(FirmwareError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let head = Header { manifest_len: word(4) as usize, blob_len: word(8) as usize, crc: word(12) };
        Ok((head, &bytes[HEADER_LEN..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn round_trip() {
        let img = FirmwareImage::new(Manifest::new(Behavior::Tag).with_param("exchanges", "100"), vec![1, 2, 3]);
        let bytes = img.encode();
        assert_eq!(&bytes[..4], b"FWIM");
        assert_eq!(FirmwareImage::decode(&bytes).unwrap(), img);
        assert!(img.checksum_ok());
    }

    #[test]
    fn corrupt_blob_keeps_declared_crc() {
        let img = FirmwareImage::new(Manifest::new(Behavior::Anchor), vec![0; 64]);
        let mut bytes = img.encode();
        *bytes.last_mut().unwrap() = 1;
        let back = FirmwareImage::decode(&bytes).unwrap();
        assert!(!back.checksum_ok());
    }

    #[test]
    fn structural_errors() {
        assert_eq!(FirmwareImage::decode(b"FWIM"), Err(FirmwareError::Truncated));
        assert_eq!(FirmwareImage::decode(&[0; 16]), Err(FirmwareError::BadMagic));
        let mut bytes = FirmwareImage::new(Manifest::new(Behavior::Blank), vec![]).encode();
        bytes.push(0);
        assert_eq!(FirmwareImage::decode(&bytes), Err(FirmwareError::LengthMismatch));
    }
}
