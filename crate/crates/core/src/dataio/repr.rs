//! The `SPCL` binary representation format.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                               |
//! |--------------|---------------------------------------|
//! | 4            | magic `SPCL`                          |
//! | 4            | version, u32 = 1                      |
//! | 12           | N, T, P as u32                        |
//! | 4·N·T·P      | representations, f32, row-major       |
//! | 4 + len      | provenance digest, u32 length + UTF-8 |

use std::path::Path;

use super::ReprSet;
use crate::error::{Error, Result};

pub const SPCL_MAGIC: &[u8; 4] = b"SPCL";
pub const SPCL_VERSION: u32 = 1;

pub fn repr_to_bytes(rs: &ReprSet) -> Result<Vec<u8>> {
    let dims = [rs.n, rs.t, rs.p]
        .iter()
        .map(|&v| u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;
    let digest = rs.provenance.as_bytes();
    let mut out = Vec::with_capacity(24 + 4 * rs.reps.len() + digest.len());
    out.extend_from_slice(SPCL_MAGIC);
    out.extend_from_slice(&SPCL_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in &rs.reps {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(digest.len() as u32).to_le_bytes());
    out.extend_from_slice(digest);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let end = *pos + len;
    if end > bytes.len() {
        return Err(Error::Format(format!(
            "truncated {what}: expected {end} bytes, file has {}",
            bytes.len()
        )));
    }
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let b = take(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn repr_from_bytes(bytes: &[u8]) -> Result<ReprSet> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4, "magic")? != SPCL_MAGIC {
        return Err(Error::Format("bad magic, expected SPCL".into()));
    }
    let version = u32_at(bytes, &mut pos, "version")?;
    if version != SPCL_VERSION {
        return Err(Error::Format(format!("unsupported SPCL version {version}")));
    }
    let n = u32_at(bytes, &mut pos, "header")? as usize;
    let t = u32_at(bytes, &mut pos, "header")? as usize;
    let p = u32_at(bytes, &mut pos, "header")? as usize;
    let count = n * t * p;
    let payload = take(bytes, &mut pos, 4 * count, "payload")?;
    let reps = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let len = u32_at(bytes, &mut pos, "digest length")? as usize;
    let digest = take(bytes, &mut pos, len, "digest")?;
    let provenance = String::from_utf8(digest.to_vec())
        .map_err(|e| Error::Format(format!("digest is not UTF-8: {e}")))?;
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after digest",
            bytes.len() - pos
        )));
    }
    ReprSet::new(n, t, p, reps, provenance).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_repr(rs: &ReprSet, path: &Path) -> Result<()> {
    std::fs::write(path, repr_to_bytes(rs)?)?;
    Ok(())
}

pub fn read_repr(path: &Path) -> Result<ReprSet> {
    repr_from_bytes(&std::fs::read(path)?)
}
