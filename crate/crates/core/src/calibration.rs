//! Building a [`DetectorProfile`] from in-distribution feature dumps.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmap::{
    aggregate_channel_information, embed, embedding_len, select_top_channels, ChannelMask,
    Embedding, FeatureTensor, Shape, REDUCE_CHUNK,
};
use crate::metrics::{tnr_at_tpr, ScoreSet};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_SELECT_FRACTION: f64 = 0.5;
pub const DEFAULT_POOL_K: usize = 4;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// The frozen calibration artifact deployed at the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorProfile {
    pub layer_id: String,
    pub input_shape: Shape,
    pub mask: ChannelMask,
    pub pool_k: usize,
    pub centroid: Vec<f32>,
    pub threshold: f64,
    pub confidence: f64,
    pub calibration_count: usize,
    pub format_version: u32,
}

impl DetectorProfile {
    pub fn embedding_dim(&self) -> usize {
        embedding_len(self.input_shape, self.mask.selected_count(), self.pool_k)
    }

    /// Checks every structural invariant of the profile.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvariantViolation(m));
        if self.layer_id.is_empty() || self.layer_id.contains(['\n', '\r']) {
            return bad(format!("invalid layer id {:?}", self.layer_id));
        }
        if self.input_shape.validate().is_err() {
            return bad(format!("invalid input shape {}", self.input_shape));
        }
        if self.mask.len() != self.input_shape.channels {
            return bad(format!(
                "mask length {} does not match {} channels",
                self.mask.len(),
                self.input_shape.channels
            ));
        }
        if self.mask.selected_count() == 0 {
            return bad("mask selects no channels".into());
        }
        if self.pool_k == 0
            || self.pool_k > self.input_shape.height
            || self.pool_k > self.input_shape.width
        {
            return bad(format!(
                "pool size {} invalid for {}",
                self.pool_k, self.input_shape
            ));
        }
        if self.centroid.len() != self.embedding_dim() {
            return bad(format!(
                "centroid length {} does not match embedding dimension {}",
                self.centroid.len(),
                self.embedding_dim()
            ));
        }
        if self.centroid.iter().any(|v| !v.is_finite()) {
            return bad("centroid has non-finite entries".into());
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return bad(format!("threshold {} must be finite and >= 0", self.threshold));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence {} outside (0, 1)", self.confidence));
        }
        if self.calibration_count == 0 {
            return bad("calibration count must be positive".into());
        }
        if self.format_version != PROFILE_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: PROFILE_FORMAT_VERSION,
            });
        }
        Ok(())
    }
}

/// Knobs for [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationConfig {
    pub layer_id: String,
    pub select_fraction: f64,
    pub pool_k: usize,
    pub confidence: f64,
}

impl CalibrationConfig {
    pub fn new(layer_id: impl Into<String>) -> Self {
        CalibrationConfig {
            layer_id: layer_id.into(),
            select_fraction: DEFAULT_SELECT_FRACTION,
            pool_k: DEFAULT_POOL_K,
            confidence: DEFAULT_CONFIDENCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "select fraction {} outside (0, 1]",
                self.select_fraction
            )));
        }
        if self.pool_k == 0 {
            return Err(Error::invalid("pool size must be positive"));
        }
        check_confidence(self.confidence)
    }
}

fn check_confidence(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("confidence {p} outside (0, 1)")));
    }
    Ok(())
}

/// Number of channels kept: `round(fraction * C)` clamped to `[1, C]`.
pub fn selected_channel_count(fraction: f64, channels: usize) -> usize {
    ((fraction * channels as f64).round() as usize).clamp(1, channels)
}

/// Element-wise mean of the embeddings.
pub fn compute_centroid(embeddings: &[Embedding]) -> Result<Vec<f64>> {
    let Some(first) = embeddings.first() else {
        return Err(Error::invalid("centroid of an empty set"));
    };
    let dim = first.len();
    if let Some(e) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::invalid(format!(
            "ragged embeddings: lengths {dim} and {}",
            e.len()
        )));
    }
    let partials: Vec<Vec<f64>> = embeddings
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0f64; dim];
            for e in chunk {
                for (a, &v) in acc.iter_mut().zip(e.values()) {
                    *a += v as f64;
                }
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0f64; dim];
    for p in partials {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let n = embeddings.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Euclidean distance `||e - c||`.
pub fn distance<C: Copy + Into<f64>>(e: &[f32], c: &[C]) -> Result<f64> {
    if e.len() != c.len() {
        return Err(Error::invalid(format!(
            "distance between vectors of length {} and {}",
            e.len(),
            c.len()
        )));
    }
    Ok(e.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = a as f64 - b.into();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// 1-based nearest-rank index: the smallest `r` with `r / n >= p`.
pub fn nearest_rank(n: usize, p: f64) -> usize {
    let nf = n as f64;
    let mut r = ((p * nf).ceil() as usize).clamp(1, n);
    // `p * n` can land a hair above an integer; walk to the exact minimum.
    while r > 1 && (r - 1) as f64 / nf >= p {
        r -= 1;
    }
    while r < n && (r as f64) / nf < p {
        r += 1;
    }
    r
}

/// Smallest order statistic `t` of `values` with `|{v <= t}| / n >= p`.
pub(crate) fn upper_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[nearest_rank(sorted.len(), p) - 1]
}

/// Threshold such that a fraction `p` of the calibration distances are `<=` it.
pub fn fit_threshold(distances: &[f64], p: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::invalid("threshold from an empty distance set"));
    }
    check_confidence(p)?;
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::invalid(format!("distance {d} is not a finite non-negative value")));
    }
    if distances.len() < 100 {
        tracing::warn!(
            n = distances.len(),
            "fitting a threshold on fewer than 100 calibration samples"
        );
    }
    Ok(upper_quantile(distances, p))
}

/// Embeds every sample under `mask`/`k`, preserving order.
pub fn embed_all(
    samples: &[FeatureTensor],
    mask: &ChannelMask,
    k: usize,
) -> Result<Vec<Embedding>> {
    samples.par_iter().map(|x| embed(x, mask, k)).collect()
}

/// Runs the full calibration pipeline on an in-distribution dump.
pub fn calibrate(id_features: &[FeatureTensor], config: &CalibrationConfig) -> Result<DetectorProfile> {
    config.validate()?;
    if config.layer_id.is_empty() || config.layer_id.contains(['\n', '\r']) {
        return Err(Error::invalid(format!("invalid layer id {:?}", config.layer_id)));
    }
    let info = aggregate_channel_information(id_features)?;
    let shape = id_features[0].shape();
    let n = selected_channel_count(config.select_fraction, shape.channels);
    let mask = select_top_channels(&info, n)?;
    let embeddings = embed_all(id_features, &mask, config.pool_k)?;

    // The distances are measured against the stored (f32) centroid so a
    // reloaded profile reproduces the calibration scores exactly.
    let centroid: Vec<f32> = compute_centroid(&embeddings)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let distances: Vec<f64> = embeddings
        .par_iter()
        .map(|e| distance(e.values(), &centroid))
        .collect::<Result<_>>()?;
    if distances.len() == 1 {
        tracing::warn!("single-sample calibration set; threshold is zero");
    }
    let threshold = fit_threshold(&distances, config.confidence)?;

    let profile = DetectorProfile {
        layer_id: config.layer_id.clone(),
        input_shape: shape,
        mask,
        pool_k: config.pool_k,
        centroid,
        threshold,
        confidence: config.confidence,
        calibration_count: id_features.len(),
        format_version: PROFILE_FORMAT_VERSION,
    };
    profile.validate()?;
    Ok(profile)
}

/// ID and validation-OOD dumps for one candidate layer.
#[derive(Debug, Clone)]
pub struct LayerDump {
    pub id_features: Vec<FeatureTensor>,
    pub ood_features: Vec<FeatureTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSweepRow {
    pub layer_id: String,
    pub tnr_at_95_tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSweepResult {
    pub rows: Vec<LayerSweepRow>,
    pub chosen_layer: String,
}

/// Calibrates every layer on its ID dump and picks the one whose validation
/// OOD is best rejected at TPR = confidence. Dumps are ordered shallowest
/// first; ties keep the earlier layer.
pub fn sweep_layers(
    dumps: &[(String, LayerDump)],
    select_fraction: f64,
    pool_k: usize,
    confidence: f64,
) -> Result<LayerSweepResult> {
    if dumps.is_empty() {
        return Err(Error::invalid("layer sweep over no layers"));
    }
    let mut rows = Vec::with_capacity(dumps.len());
    for (i, (layer_id, dump)) in dumps.iter().enumerate() {
        if dumps[..i].iter().any(|(l, _)| l == layer_id) {
            return Err(Error::invalid(format!("duplicate layer `{layer_id}`")));
        }
        if dump.id_features.is_empty() {
            return Err(Error::invalid(format!("layer `{layer_id}` has no ID dump")));
        }
        if dump.ood_features.is_empty() {
            return Err(Error::invalid(format!(
                "layer `{layer_id}` has no validation OOD dump"
            )));
        }
        let config = CalibrationConfig {
            layer_id: layer_id.clone(),
            select_fraction,
            pool_k,
            confidence,
        };
        let profile = calibrate(&dump.id_features, &config)?;
        let id_scores = crate::detector::score_all(&dump.id_features, &profile)?;
        let ood_scores = crate::detector::score_all(&dump.ood_features, &profile)?;
        let (tnr, threshold) = tnr_at_tpr(&ScoreSet::new(id_scores, ood_scores), confidence)?;
        tracing::debug!(layer = %layer_id, tnr, "layer sweep row");
        rows.push(LayerSweepRow {
            layer_id: layer_id.clone(),
            tnr_at_95_tpr: tnr,
            threshold,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.tnr_at_95_tpr > rows[best].tnr_at_95_tpr {
            best = i;
        }
    }
    let chosen_layer = rows[best].layer_id.clone();
    Ok(LayerSweepResult { rows, chosen_layer })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_examples() {
        let e = |v: &[f32]| Embedding(v.to_vec());
        assert_eq!(compute_centroid(&[e(&[0., 0.]), e(&[2., 2.])]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(compute_centroid(&[e(&[0.25, -3.0])]).unwrap(), vec![0.25, -3.0]);
        assert_eq!(
            compute_centroid(&[e(&[1., 2.]), e(&[3., 4.]), e(&[5., 6.])]).unwrap(),
            vec![3.0, 4.0]
        );
        assert!(compute_centroid(&[]).is_err());
        assert!(compute_centroid(&[e(&[1.]), e(&[1., 2.])]).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(&[1.5, 2.0], &[1.5f32, 2.0]).unwrap(), 0.0);
        assert_eq!(distance(&[3.0, 4.0], &[0.0f64, 0.0]).unwrap(), 5.0);
        assert_eq!(distance(&[1.0], &[-1.0f32]).unwrap(), 2.0);
        assert!(distance(&[1.0], &[1.0f32, 2.0]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(fit_threshold(&d, 0.95).unwrap(), 95.0);
        assert_eq!(fit_threshold(&[2.5; 30], 0.95).unwrap(), 2.5);
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(fit_threshold(&d, 0.95).unwrap(), 10.0);
    }

    #[test]
    fn threshold_errors() {
        assert!(fit_threshold(&[], 0.95).is_err());
        assert!(fit_threshold(&[1.0], 0.0).is_err());
        assert!(fit_threshold(&[1.0], 1.0).is_err());
        assert!(fit_threshold(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn nearest_rank_is_exact_minimum() {
        for n in 1..300 {
            for &p in &[0.1, 0.3, 0.7, 0.9, 0.95, 0.99] {
                let r = nearest_rank(n, p);
                assert!(r as f64 / n as f64 >= p, "n={n} p={p} r={r}");
                if r > 1 {
                    assert!(((r - 1) as f64 / n as f64) < p, "n={n} p={p} r={r}");
                }
            }
        }
    }

    #[test]
    fn selected_count_rounds_half_away() {
        assert_eq!(selected_channel_count(0.5, 8), 4);
        assert_eq!(selected_channel_count(0.5, 3), 2);
        assert_eq!(selected_channel_count(0.01, 8), 1);
        assert_eq!(selected_channel_count(1.0, 240), 240);
        assert_eq!(selected_channel_count(0.5, 240), 120);
    }

    fn planes(values: &[f32], h: usize, w: usize) -> FeatureTensor {
        let c = values.len() / (h * w);
        FeatureTensor::new(c, h, w, values.to_vec()).unwrap()
    }

    #[test]
    fn single_sample_profile_is_degenerate() {
        let x = planes(&(0..32).map(|v| v as f32).collect::<Vec<_>>(), 4, 4);
        let p = calibrate(std::slice::from_ref(&x), &CalibrationConfig::new("bn1")).unwrap();
        assert_eq!(p.mask.selected_count(), 1);
        assert_eq!(p.centroid, embed(&x, &p.mask, 4).unwrap().0);
        assert_eq!(p.threshold, 0.0);
    }

    #[test]
    fn no_reduction_profile_embeds_everything() {
        let xs: Vec<_> = (0..3)
            .map(|i| planes(&(0..12).map(|v| (v * i) as f32).collect::<Vec<_>>(), 2, 3))
            .collect();
        let cfg = CalibrationConfig {
            layer_id: "input".into(),
            select_fraction: 1.0,
            pool_k: 1,
            confidence: 0.95,
        };
        let p = calibrate(&xs, &cfg).unwrap();
        assert_eq!(p.embedding_dim(), 12);
        assert_eq!(embed(&xs[1], &p.mask, 1).unwrap().values(), xs[1].data());
    }

    #[test]
    fn calibrate_rejects_bad_config() {
        let x = planes(&[0.0; 16], 4, 4);
        let mut cfg = CalibrationConfig::new("bn1");
        cfg.confidence = 1.5;
        assert!(calibrate(std::slice::from_ref(&x), &cfg).is_err());
        let mut cfg = CalibrationConfig::new("bn1");
        cfg.select_fraction = 0.0;
        assert!(calibrate(std::slice::from_ref(&x), &cfg).is_err());
        let cfg = CalibrationConfig::new("bad\nid");
        assert!(calibrate(std::slice::from_ref(&x), &cfg).is_err());
        assert!(calibrate(&[], &CalibrationConfig::new("bn1")).is_err());
    }

    #[test]
    fn sweep_requires_both_dumps() {
        let x = planes(&[0.0; 16], 4, 4);
        let dumps = vec![(
            "bn1".to_string(),
            LayerDump {
                id_features: vec![x],
                ood_features: vec![],
            },
        )];
        assert!(sweep_layers(&dumps, 0.5, 4, 0.95).is_err());
        assert!(sweep_layers(&[], 0.5, 4, 0.95).is_err());
    }
}
