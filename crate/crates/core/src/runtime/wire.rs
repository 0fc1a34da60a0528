//! Binary frames exchanged between master and workers.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "APAM"
//! 4       1     type (0 params, 1 gradient, 2 shutdown)
//! 5       8     version, u64 LE
//! 13      4     worker id, u32 LE
//! 17      4     n, u32 LE
//! 21      8n    payload, f64 LE
//! 21+8n   4     CRC-32 (IEEE) of bytes 0..21+8n, u32 LE
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"APAM";
pub const HEADER_LEN: usize = 21;
pub const CRC_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Params = 0,
    Gradient = 1,
    Shutdown = 2,
}

impl FrameType {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FrameType::Params),
            1 => Some(FrameType::Gradient),
            2 => Some(FrameType::Shutdown),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("crc mismatch: frame says {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("payload of {0} values does not fit a frame")]
    PayloadTooLarge(usize),
    #[error("i/o: {0}")]
    Io(String),
}

impl WireError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            WireError::BadMagic(_) => 1,
            WireError::Truncated { .. } => 2,
            WireError::CrcMismatch { .. } => 3,
            WireError::UnknownType(_) => 4,
            WireError::TrailingBytes(_) => 5,
            WireError::PayloadTooLarge(_) => 6,
            WireError::Io(_) => 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub msg_type: FrameType,
    pub version: u64,
    pub worker_id: u32,
    pub payload: Vec<f64>,
}

impl WireFrame {
    pub fn shutdown(worker_id: u32) -> Self {
        WireFrame { msg_type: FrameType::Shutdown, version: 0, worker_id, payload: Vec::new() }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.payload.len() + CRC_LEN
    }
}

pub fn encode_frame(f: &WireFrame) -> Result<Vec<u8>, WireError> {
    let n = u32::try_from(f.payload.len()).map_err(|_| WireError::PayloadTooLarge(f.payload.len()))?;
    let mut out = Vec::with_capacity(f.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(f.msg_type as u8);
    out.extend_from_slice(&f.version.to_le_bytes());
    out.extend_from_slice(&f.worker_id.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for v in &f.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Total frame length announced by a header, after checking the magic.
fn frame_len(header: &[u8]) -> Result<usize, WireError> {
    if header.len() < 4 {
        return Err(WireError::Truncated { needed: HEADER_LEN, have: header.len() });
    }
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if header.len() < HEADER_LEN {
        return Err(WireError::Truncated { needed: HEADER_LEN, have: header.len() });
    }
    let n = le_u32(&header[17..21]) as usize;
    Ok(HEADER_LEN + 8 * n + CRC_LEN)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, WireError> {
    let total = frame_len(bytes)?;
    if bytes.len() < total {
        return Err(WireError::Truncated { needed: total, have: bytes.len() });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes(bytes.len() - total));
    }
    let body = &bytes[..total - CRC_LEN];
    let stored = le_u32(&bytes[total - CRC_LEN..]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(WireError::CrcMismatch { stored, computed });
    }
    let msg_type = FrameType::from_byte(bytes[4]).ok_or(WireError::UnknownType(bytes[4]))?;
    let payload =
        body[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(WireFrame { msg_type, version: le_u64(&bytes[5..13]), worker_id: le_u32(&bytes[13..17]), payload })
}

/// Reads one frame from a stream. Returns `Ok(None)` on a clean end of stream
/// before any byte of a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<WireFrame>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated { needed: HEADER_LEN, have: got }),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(WireError::Io(e.to_string())),
        }
    }
    let total = frame_len(&header)?;
    let mut buf = header.to_vec();
    buf.resize(total, 0);
    r.read_exact(&mut buf[HEADER_LEN..]).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Truncated { needed: total, have: HEADER_LEN }
        } else {
            WireError::Io(e.to_string())
        }
    })?;
    decode_frame(&buf).map(Some)
}

pub fn write_frame<W: Write>(w: &mut W, f: &WireFrame) -> Result<(), WireError> {
    let bytes = encode_frame(f)?;
    w.write_all(&bytes).map_err(|e| WireError::Io(e.to_string()))?;
    w.flush().map_err(|e| WireError::Io(e.to_string()))
}
