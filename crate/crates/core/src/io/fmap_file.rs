//! FMAP: a fixed header followed by a little-endian `f32` payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FMAP"
//! 4       1     version (1)
//! 5       1     dtype (1 = f32 little-endian)
//! 6       4     C (u32 LE)
//! 10      4     H (u32 LE)
//! 14      4     W (u32 LE)
//! 18      4*CHW payload, channel-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fmap::FeatureTensor;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u8 = 1;
pub const FMAP_DTYPE_F32: u8 = 1;
pub const FMAP_HEADER_LEN: usize = 18;

pub fn encode_feature(x: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAP_HEADER_LEN + 4 * x.data().len());
    out.extend_from_slice(FMAP_MAGIC);
    out.push(FMAP_VERSION);
    out.push(FMAP_DTYPE_F32);
    for d in [x.channels(), x.height(), x.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_feature(bytes: &[u8]) -> Result<FeatureTensor> {
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "truncated header: {} of {FMAP_HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    if bytes[4] != FMAP_VERSION {
        return Err(Error::VersionMismatch {
            found: bytes[4] as u32,
            expected: FMAP_VERSION as u32,
        });
    }
    if bytes[5] != FMAP_DTYPE_F32 {
        return Err(Error::MalformedHeader(format!("unsupported dtype {}", bytes[5])));
    }
    let (c, h, w) = (u32_at(bytes, 6), u32_at(bytes, 10), u32_at(bytes, 14));
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension in {c}x{h}x{w}")));
    }
    let expected = (c as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(w as usize))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FMAP_HEADER_LEN))
        .ok_or_else(|| Error::MalformedHeader(format!("dimensions {c}x{h}x{w} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[FMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    FeatureTensor::new(c as usize, h as usize, w as usize, data)
}

pub fn write_feature(path: impl AsRef<Path>, x: &FeatureTensor) -> Result<()> {
    fs::write(path, encode_feature(x))?;
    Ok(())
}

pub fn read_feature(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    decode_feature(&fs::read(path)?)
}

/// Reads every `*.fmap` file in `dir`, sorted by file name.
pub fn read_feature_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, FeatureTensor)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "fmap"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_feature(&p).map(|t| (p, t)))
        .collect()
}
