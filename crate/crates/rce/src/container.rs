//! Framing shared by the binary formats:
//!
//! ```text
//! magic[4] | version u32 | header_len u32 | header (JSON) | payload | crc32 u32
//! ```
//!
//! Integers are little-endian. The CRC covers every byte before it and is
//! checked before anything else is parsed.

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("file is too short to be a {kind} file")]
    Truncated { kind: &'static str },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("unsupported {kind} version {found}")]
    Version { kind: &'static str, found: u32 },
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("inconsistent file: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn encode<H: Serialize>(magic: &[u8; 4], version: u32, header: &H, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("headers are plain data");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Verifies the checksum, magic and version, then returns the parsed header
/// and the raw payload.
pub(crate) fn decode<'a, H: DeserializeOwned>(
    bytes: &'a [u8],
    magic: &'static [u8; 4],
    version: u32,
    kind: &'static str,
) -> Result<(H, &'a [u8]), FormatError> {
    if bytes.len() < 16 {
        return Err(FormatError::Truncated { kind });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    if &body[..4] != magic {
        return Err(FormatError::Magic {
            expected: std::str::from_utf8(magic).unwrap_or("?"),
        });
    }
    let found = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if found != version {
        return Err(FormatError::Version { kind, found });
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let rest = &body[12..];
    if header_len > rest.len() {
        return Err(FormatError::Truncated { kind });
    }
    let header = serde_json::from_slice(&rest[..header_len])?;
    Ok((header, &rest[header_len..]))
}
