//! `FSO1` transport frame.
//!
//! ```text
//! offset size
//!      0    4  magic "FSO1"
//!      4    1  version 0x01
//!      5    1  flags (bit 0: 1 = raw video frames, 0 = opaque stream)
//!      6    4  seq, u32 big-endian
//!     10    2  payload_len, u16 big-endian (<= 8192)
//!     12    n  payload
//!   12+n    4  CRC-32 over bytes [0, 12+n), big-endian
//! ```

use thiserror::Error;

use super::crc32;

pub const MAGIC: [u8; 4] = *b"FSO1";
pub const VERSION: u8 = 0x01;
pub const MAX_PAYLOAD: usize = 8192;
pub const HEADER_LEN: usize = 12;
/// Header plus CRC trailer.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + 4;
pub const FLAG_RAW_FRAMES: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub seq: u32,
    pub flags: u8,
    pub payload: Vec<u8>,
}

/// First integrity check a received buffer failed.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version")]
    BadVersion,
    #[error("length mismatch")]
    BadLength,
    #[error("CRC mismatch")]
    BadCrc,
}

/// Panics if `payload` exceeds [`MAX_PAYLOAD`].
pub fn frame_pack(seq: u32, flags: u8, payload: &[u8]) -> Vec<u8> {
    assert!(payload.len() <= MAX_PAYLOAD, "payload of {} bytes exceeds {MAX_PAYLOAD}", payload.len());
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(flags);
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

pub fn frame_unpack(bytes: &[u8]) -> Result<Frame, IntegrityError> {
    let magic_seen = &bytes[..bytes.len().min(4)];
    if magic_seen != &MAGIC[..magic_seen.len()] {
        return Err(IntegrityError::BadMagic);
    }
    match bytes.get(4) {
        Some(&VERSION) | None => {}
        Some(_) => return Err(IntegrityError::BadVersion),
    }
    if bytes.len() < FRAME_OVERHEAD {
        return Err(IntegrityError::BadLength);
    }
    let payload_len = u16::from_be_bytes([bytes[10], bytes[11]]) as usize;
    if payload_len > MAX_PAYLOAD || bytes.len() != FRAME_OVERHEAD + payload_len {
        return Err(IntegrityError::BadLength);
    }
    let body = HEADER_LEN + payload_len;
    let crc = u32::from_be_bytes(bytes[body..].try_into().expect("4-byte trailer"));
    if crc32(&bytes[..body]) != crc {
        return Err(IntegrityError::BadCrc);
    }
    Ok(Frame {
        seq: u32::from_be_bytes(bytes[6..10].try_into().expect("4-byte seq")),
        flags: bytes[5],
        payload: bytes[HEADER_LEN..body].to_vec(),
    })
}
