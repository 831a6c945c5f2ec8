//! Fixtures shared by the loopback tests.

#![allow(dead_code)]

use earlin_core::calibration::PROFILE_FORMAT_VERSION;
use earlin_core::io::encode_feature;
use earlin_core::{ChannelMask, DetectorProfile, FeatureTensor, Shape};
use earlin_collab::EdgeSample;

/// 1×4×4 input pooled with k=4 gives a one-value embedding; with centroid 0
/// and Θ = 1 a constant tensor is kept iff its value is in [-1, 1]. This lets
/// tests force each detector decision.
pub fn gate_profile() -> DetectorProfile {
    DetectorProfile {
        layer_id: "gate".into(),
        input_shape: Shape::new(1, 4, 4),
        mask: ChannelMask::all(1).unwrap(),
        pool_k: 4,
        centroid: vec![0.0],
        threshold: 1.0,
        confidence: 0.95,
        calibration_count: 1,
        format_version: PROFILE_FORMAT_VERSION,
    }
}

/// A distinct 3×2×2 raw input per index, FMAP-encoded.
pub fn raw_payload(i: usize) -> Vec<u8> {
    let data = (0..12).map(|j| (i * 12 + j) as f32).collect();
    encode_feature(&FeatureTensor::new(3, 2, 2, data).unwrap())
}

pub fn gated_sample(i: usize, keep: bool) -> EdgeSample {
    let v = if keep { 0.5 } else { 2.0 };
    EdgeSample {
        id: format!("s{i:06}"),
        features: FeatureTensor::new(1, 4, 4, vec![v; 16]).unwrap(),
        payload: raw_payload(i),
    }
}
