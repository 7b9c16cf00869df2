//! Self-describing container for one coded image.

use sha2::{Digest, Sha256};

use crate::codec::arch::ArchConfig;
use crate::codec::params::short_hash;
use crate::error::{CoreError, Result};

pub const MAGIC: [u8; 4] = *b"RDPC";
pub const VERSION: u8 = 1;
/// magic, version, height, width, arch hash, frozen hash, z length, y length.
pub const HEADER_LEN: usize = 4 + 1 + 2 + 2 + 8 + 8 + 4 + 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub height: u16,
    pub width: u16,
    pub arch_hash: [u8; 8],
    pub frozen_hash: [u8; 8],
    pub z_payload: Vec<u8>,
    pub y_payload: Vec<u8>,
}

/// First eight bytes of SHA-256 over the canonical architecture encoding.
pub fn arch_hash(arch: &ArchConfig) -> [u8; 8] {
    short_hash(&hex::encode(Sha256::digest(arch.canonical_bytes())))
}

impl Bitstream {
    pub fn len(&self) -> usize {
        HEADER_LEN + self.z_payload.len() + self.y_payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coded size in bits per source pixel, header included.
    pub fn bpp(&self) -> f64 {
        (self.len() * 8) as f64 / (self.height as f64 * self.width as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.arch_hash);
        out.extend_from_slice(&self.frozen_hash);
        out.extend_from_slice(&(self.z_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.y_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z_payload);
        out.extend_from_slice(&self.y_payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CoreError::CorruptStream(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(CoreError::CorruptStream("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(CoreError::CorruptStream(format!("unsupported version {}", bytes[4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let z_len = u32_at(25);
        let y_len = u32_at(29);
        if bytes.len() != HEADER_LEN + z_len + y_len {
            return Err(CoreError::CorruptStream(format!(
                "length {} does not match header ({} + {z_len} + {y_len})",
                bytes.len(),
                HEADER_LEN
            )));
        }
        Ok(Bitstream {
            height: u16_at(5),
            width: u16_at(7),
            arch_hash: bytes[9..17].try_into().unwrap(),
            frozen_hash: bytes[17..25].try_into().unwrap(),
            z_payload: bytes[HEADER_LEN..HEADER_LEN + z_len].to_vec(),
            y_payload: bytes[HEADER_LEN + z_len..].to_vec(),
        })
    }

    /// Hex SHA-256 of the serialised stream.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
