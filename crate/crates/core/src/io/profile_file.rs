//! Detector profile files: a UTF-8 `key=value` header followed by the
//! centroid as raw little-endian `f32`.
//!
//! ```text
//! EARLIN-PROFILE v1
//! layer_id=bn5
//! input_shape=240,32,32
//! pool_k=4
//! confidence=0.95
//! threshold=12.5
//! calibration_count=10000
//! mask=0110...
//! centroid_f32le=7680
//! <7680 * 4 bytes>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so text fields
//! reload bit-exactly.

use std::fs;
use std::path::Path;

use crate::calibration::{DetectorProfile, PROFILE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::fmap::{ChannelMask, Shape};

pub const PROFILE_MAGIC: &str = "EARLIN-PROFILE";

const KEYS: [&str; 8] = [
    "layer_id",
    "input_shape",
    "pool_k",
    "confidence",
    "threshold",
    "calibration_count",
    "mask",
    "centroid_f32le",
];

pub fn encode_profile(p: &DetectorProfile) -> Result<Vec<u8>> {
    p.validate()?;
    let mask: String = p.mask.bits().iter().map(|&b| if b { '1' } else { '0' }).collect();
    let s = p.input_shape;
    let header = format!(
        "{PROFILE_MAGIC} v{}\n\
         layer_id={}\n\
         input_shape={},{},{}\n\
         pool_k={}\n\
         confidence={:?}\n\
         threshold={:?}\n\
         calibration_count={}\n\
         mask={mask}\n\
         centroid_f32le={}\n",
        p.format_version,
        p.layer_id,
        s.channels,
        s.height,
        s.width,
        p.pool_k,
        p.confidence,
        p.threshold,
        p.calibration_count,
        p.centroid.len(),
    );
    let mut out = header.into_bytes();
    out.reserve(4 * p.centroid.len());
    for v in &p.centroid {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| malformed(format!("field `{key}` has unparsable value {v:?}")))
}

/// Splits off one `\n`-terminated UTF-8 line.
fn take_line<'a>(bytes: &mut &'a [u8]) -> Result<&'a str> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("truncated header"))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| malformed("header is not valid UTF-8"))?;
    *bytes = &bytes[end + 1..];
    Ok(line)
}

pub fn decode_profile(bytes: &[u8]) -> Result<DetectorProfile> {
    let mut rest = bytes;
    let first = take_line(&mut rest)?;
    let version = first
        .strip_prefix(PROFILE_MAGIC)
        .and_then(|v| v.strip_prefix(" v"))
        .ok_or_else(|| malformed(format!("bad magic line {first:?}")))?;
    let version: u32 = parse_num("version", version)?;
    if version != PROFILE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: PROFILE_FORMAT_VERSION,
        });
    }

    let mut values: [&str; KEYS.len()] = [""; KEYS.len()];
    for (slot, key) in values.iter_mut().zip(KEYS) {
        let line = take_line(&mut rest)?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected `key=value`, got {line:?}")))?;
        if k != key {
            return Err(malformed(format!("expected field `{key}`, found `{k}`")));
        }
        *slot = v;
    }
    let [layer_id, shape, pool_k, confidence, threshold, count, mask, centroid_len] = values;

    let dims: Vec<usize> = shape
        .split(',')
        .map(|d| parse_num("input_shape", d))
        .collect::<Result<_>>()?;
    let [c, h, w] = dims[..] else {
        return Err(malformed(format!("input_shape {shape:?} is not C,H,W")));
    };
    let bits: Vec<bool> = mask
        .chars()
        .map(|ch| match ch {
            '1' => Ok(true),
            '0' => Ok(false),
            _ => Err(malformed(format!("mask contains {ch:?}"))),
        })
        .collect::<Result<_>>()?;
    let mask = ChannelMask::new(bits).map_err(|e| Error::InvariantViolation(e.to_string()))?;

    let centroid_len: usize = parse_num("centroid_f32le", centroid_len)?;
    let expected = centroid_len
        .checked_mul(4)
        .ok_or_else(|| malformed("centroid length overflows"))?;
    if rest.len() != expected {
        return Err(Error::LengthMismatch {
            expected: bytes.len() - rest.len() + expected,
            actual: bytes.len(),
        });
    }
    let centroid = rest
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();

    let profile = DetectorProfile {
        layer_id: layer_id.to_string(),
        input_shape: Shape::new(c, h, w),
        mask,
        pool_k: parse_num("pool_k", pool_k)?,
        centroid,
        threshold: parse_num("threshold", threshold)?,
        confidence: parse_num("confidence", confidence)?,
        calibration_count: parse_num("calibration_count", count)?,
        format_version: version,
    };
    profile.validate()?;
    Ok(profile)
}

pub fn save_profile(path: impl AsRef<Path>, p: &DetectorProfile) -> Result<()> {
    fs::write(path, encode_profile(p)?)?;
    Ok(())
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<DetectorProfile> {
    decode_profile(&fs::read(path)?)
}
