//! `VIVF` feature-matrix files.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"VIVF"`                         |
//! | 4      | 2    | version (`1`)                           |
//! | 6      | 2    | kind (0 = cat19, 1 = cat6, 2 = latent)  |
//! | 8      | 4    | rows                                    |
//! | 12     | 4    | cols                                    |
//! | 16     | 4·rows·cols | `f32` values, row-major          |

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{FeatureKind, FeatureMatrix};

pub const MAGIC: [u8; 4] = *b"VIVF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum VivfError {
    #[error("bad magic {0:?}, expected \"VIVF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("unknown matrix kind code {0}")]
    BadKind(u16),
    #[error("payload holds {actual} bytes, header promises {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&m.kind().code().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMatrix, VivfError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(VivfError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(VivfError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(VivfError::BadMagic(magic));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != VERSION {
        return Err(VivfError::BadVersion(version));
    }
    let kind = FeatureKind::from_code(u16_at(6)).ok_or(VivfError::BadKind(u16_at(6)))?;
    let (rows, cols) = (u32_at(8) as usize, u32_at(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or(VivfError::Truncated { expected: usize::MAX, actual: bytes.len() - HEADER_LEN })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(VivfError::Truncated { expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(VivfError::TrailingBytes(payload.len() - expected));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FeatureMatrix::new(kind, rows, cols, data).expect("shape checked above"))
}

pub fn write_to<W: Write>(m: &FeatureMatrix, mut w: W) -> io::Result<()> {
    w.write_all(&encode(m))
}

pub fn read_from<R: Read>(mut r: R) -> Result<FeatureMatrix, VivfError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}
