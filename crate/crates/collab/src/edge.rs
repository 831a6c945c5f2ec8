//! Edge node: score locally, upload only what looks in-distribution.

use std::io::{self, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use earlin_core::{detect, Decision, DetectorProfile, FeatureTensor};
use serde::Serialize;

use crate::record::{EdgeDecision, InferenceRecord};
use crate::transport::Transport;

/// One edge input: the layer activation the detector scores and the raw
/// input that is uploaded if the sample is kept.
#[derive(Debug, Clone)]
pub struct EdgeSample {
    pub id: String,
    pub features: FeatureTensor,
    /// FMAP bytes of the raw input.
    pub payload: Vec<u8>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn local_error(id: &str, message: String, t_edge_ms: Option<f64>) -> InferenceRecord {
    InferenceRecord {
        sample_id: id.to_string(),
        decision: EdgeDecision::LocalError,
        score: None,
        predicted_label: None,
        t_edge_ms,
        t_comm_plus_server_ms: None,
        error: Some(message),
    }
}

/// Runs the detector and, for ID samples only, one classify round trip.
pub fn edge_process(sample: &EdgeSample, profile: &DetectorProfile, transport: &dyn Transport) -> InferenceRecord {
    let t0 = Instant::now();
    let outcome = detect(&sample.features, profile);
    let t_edge = ms_since(t0);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return local_error(&sample.id, e.to_string(), Some(t_edge)),
    };

    let mut rec = InferenceRecord {
        sample_id: sample.id.clone(),
        decision: EdgeDecision::RejectedOOD,
        score: Some(outcome.score),
        predicted_label: None,
        t_edge_ms: Some(t_edge),
        t_comm_plus_server_ms: None,
        error: None,
    };
    if outcome.decision == Decision::Ood {
        return rec;
    }

    rec.decision = EdgeDecision::ForwardedID;
    let t1 = Instant::now();
    let reply = transport.classify(&sample.payload);
    let rt = ms_since(t1);
    match reply {
        Ok(r) => {
            rec.predicted_label = Some(r.label);
            rec.t_comm_plus_server_ms = Some(rt);
        }
        Err(e) => {
            tracing::warn!(sample = %sample.id, error = %e, "upload failed");
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// A sample that could not be loaded; becomes a `LocalError` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadError {
    pub sample_id: String,
    pub message: String,
}

/// Processes `count` samples produced by `load(i)`. With `concurrency > 1`
/// samples are pipelined across worker threads; each record still times
/// only its own sample. Records come back in index order.
pub fn process_stream<F>(
    count: usize,
    load: F,
    profile: &DetectorProfile,
    transport: &dyn Transport,
    concurrency: usize,
) -> Vec<InferenceRecord>
where
    F: Fn(usize) -> Result<EdgeSample, LoadError> + Sync,
{
    let one = |i: usize| match load(i) {
        Ok(s) => edge_process(&s, profile, transport),
        Err(e) => local_error(&e.sample_id, e.message, None),
    };
    let workers = concurrency.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(one).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<InferenceRecord>>> = Mutex::new(vec![None; count]);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let rec = one(i);
                slots.lock().expect("record slots")[i] = Some(rec);
            });
        }
    });
    slots
        .into_inner()
        .expect("record slots")
        .into_iter()
        .map(|r| r.expect("every index processed"))
        .collect()
}

/// Aggregates over a batch of records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSummary {
    pub samples: usize,
    pub forwarded: usize,
    pub rejected: usize,
    pub local_errors: usize,
    pub transport_errors: usize,
    pub forward_rate: f64,
    pub mean_t_edge_ms: f64,
    /// Mean over forwarded samples with a completed round trip.
    pub mean_round_trip_ms: f64,
    /// Per-sample mean of t_edge plus round trip (zero when not uploaded).
    pub mean_total_ms: f64,
}

impl EdgeSummary {
    pub fn from_records(records: &[InferenceRecord]) -> Self {
        let count = |d: EdgeDecision| records.iter().filter(|r| r.decision == d).count();
        let forwarded = count(EdgeDecision::ForwardedID);
        let mean = |xs: Vec<f64>| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let edge: Vec<f64> = records.iter().filter_map(|r| r.t_edge_ms).collect();
        let rt: Vec<f64> = records.iter().filter_map(|r| r.t_comm_plus_server_ms).collect();
        let n = records.len();
        let total = if n == 0 {
            0.0
        } else {
            (edge.iter().sum::<f64>() + rt.iter().sum::<f64>()) / n as f64
        };
        EdgeSummary {
            samples: n,
            forwarded,
            rejected: count(EdgeDecision::RejectedOOD),
            local_errors: count(EdgeDecision::LocalError),
            transport_errors: records
                .iter()
                .filter(|r| r.decision == EdgeDecision::ForwardedID && r.error.is_some())
                .count(),
            forward_rate: if n == 0 { 0.0 } else { forwarded as f64 / n as f64 },
            mean_t_edge_ms: mean(edge),
            mean_round_trip_ms: mean(rt),
            mean_total_ms: total,
        }
    }
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[InferenceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ClassificationResult;
    use crate::transport::TransportError;
    use earlin_core::calibration::PROFILE_FORMAT_VERSION;
    use earlin_core::{ChannelMask, Shape};
    use std::sync::atomic::AtomicU64;

    struct Counting(AtomicU64);

    impl Transport for Counting {
        fn classify(&self, _body: &[u8]) -> Result<ClassificationResult, TransportError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(ClassificationResult {
                label: "cat".into(),
                class_index: 0,
                server_ms: 0.0,
            })
        }
    }

    struct Down;

    impl Transport for Down {
        fn classify(&self, _body: &[u8]) -> Result<ClassificationResult, TransportError> {
            Err(TransportError::Connection("connection refused".into()))
        }
    }

    // 1×4×4 input, k=4 → a single embedding value, centroid 0, Θ = 1:
    // constant tensors with |v| ≤ 1 are kept.
    fn profile() -> DetectorProfile {
        DetectorProfile {
            layer_id: "l".into(),
            input_shape: Shape {
                channels: 1,
                height: 4,
                width: 4,
            },
            mask: ChannelMask::all(1).unwrap(),
            pool_k: 4,
            centroid: vec![0.0],
            threshold: 1.0,
            confidence: 0.95,
            calibration_count: 1,
            format_version: PROFILE_FORMAT_VERSION,
        }
    }

    fn sample(id: &str, v: f32) -> EdgeSample {
        EdgeSample {
            id: id.into(),
            features: FeatureTensor::new(1, 4, 4, vec![v; 16]).unwrap(),
            payload: vec![1, 2, 3],
        }
    }

    #[test]
    fn ood_never_touches_the_network() {
        let t = Counting(AtomicU64::new(0));
        let r = edge_process(&sample("a", 5.0), &profile(), &t);
        assert_eq!(r.decision, EdgeDecision::RejectedOOD);
        assert_eq!(t.0.load(Ordering::SeqCst), 0);
        assert!(r.is_consistent());
        assert_eq!(r.score, Some(5.0));
    }

    #[test]
    fn id_is_forwarded() {
        let t = Counting(AtomicU64::new(0));
        let r = edge_process(&sample("a", 1.0), &profile(), &t);
        assert_eq!(r.decision, EdgeDecision::ForwardedID);
        assert_eq!(r.predicted_label.as_deref(), Some("cat"));
        assert!(r.t_comm_plus_server_ms.is_some());
        assert_eq!(t.0.load(Ordering::SeqCst), 1);
        assert!(r.is_consistent());
    }

    #[test]
    fn transport_failure_is_recorded() {
        let r = edge_process(&sample("a", 0.0), &profile(), &Down);
        assert_eq!(r.decision, EdgeDecision::ForwardedID);
        assert_eq!(r.error.as_deref(), Some("connection refused"));
        assert!(r.is_consistent());
    }

    #[test]
    fn shape_mismatch_is_local() {
        let t = Counting(AtomicU64::new(0));
        let mut s = sample("a", 0.0);
        s.features = FeatureTensor::new(2, 4, 4, vec![0.0; 32]).unwrap();
        let r = edge_process(&s, &profile(), &t);
        assert_eq!(r.decision, EdgeDecision::LocalError);
        assert!(r.is_consistent());
        assert_eq!(t.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn stream_order_and_counts() {
        let t = Counting(AtomicU64::new(0));
        let load = |i: usize| {
            if i == 7 {
                Err(LoadError {
                    sample_id: "s7".into(),
                    message: "missing".into(),
                })
            } else {
                Ok(sample(&format!("s{i}"), if i.is_multiple_of(2) { 0.5 } else { 3.0 }))
            }
        };
        let recs = process_stream(20, load, &profile(), &t, 4);
        assert!(recs.iter().enumerate().all(|(i, r)| r.sample_id == format!("s{i}")));
        let sum = EdgeSummary::from_records(&recs);
        assert_eq!((sum.forwarded, sum.rejected, sum.local_errors), (10, 9, 1));
        assert_eq!(t.0.load(Ordering::SeqCst), 10);
        assert_eq!(sum.forward_rate, 0.5);

        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 20);
    }
}
