mod support;

use earlin_core::metrics::{
    accuracy_slope, auroc, detection_accuracy, expected_latency, latency_slope,
    overall_accuracy, tnr_at_tpr, LatencyParams, MetricsReport, ScoreSet,
};
use proptest::prelude::*;
use support::oracle;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    // A coarse grid produces plenty of ties.
    prop::collection::vec((0i32..60).prop_map(|v| v as f64 * 0.5), 1..200)
}

proptest! {
    #[test]
    fn tnr_at_tpr_matches_exhaustive_sweep(id in scores(), ood in scores(), t in 0.05f64..0.99) {
        let got = tnr_at_tpr(&ScoreSet::new(id.clone(), ood.clone()), t).unwrap();
        prop_assert_eq!(got, oracle::tnr_at_tpr_sweep(&id, &ood, t));
    }

    #[test]
    fn auroc_matches_pair_counting(id in scores(), ood in scores()) {
        let got = auroc(&ScoreSet::new(id.clone(), ood.clone())).unwrap();
        prop_assert!((got - oracle::auroc_pairs(&id, &ood)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform(id in scores(), ood in scores()) {
        let f = |v: &f64| (0.3 * v).exp() - 7.0;
        let a = auroc(&ScoreSet::new(id.clone(), ood.clone())).unwrap();
        let b = auroc(&ScoreSet::new(id.iter().map(f).collect(), ood.iter().map(f).collect())).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn closed_forms_are_affine_in_rho(
        acc in 0.0f64..=1.0, tpr in 0.0f64..=1.0, tnr in 0.0f64..=1.0,
        r0 in 0.0f64..=0.25, r1 in 0.75f64..=1.0,
    ) {
        let lp = LatencyParams::new(32.8, 186.5, 47.8);
        let fd_acc = (overall_accuracy(acc, tpr, tnr, r1).unwrap() - overall_accuracy(acc, tpr, tnr, r0).unwrap()) / (r1 - r0);
        prop_assert!((fd_acc - accuracy_slope(acc, tpr, tnr).unwrap()).abs() <= 1e-12);
        let fd_lat = (expected_latency(&lp, tpr, tnr, r1).unwrap() - expected_latency(&lp, tpr, tnr, r0).unwrap()) / (r1 - r0);
        let slope = latency_slope(&lp, tpr, tnr).unwrap();
        prop_assert!((fd_lat - slope).abs() <= 1e-12, "{} vs {}", fd_lat, slope);
    }

    #[test]
    fn report_identities(id in scores(), ood in scores(), t in 0.05f64..0.99) {
        let r = MetricsReport::at_tpr(&ScoreSet::new(id, ood), t).unwrap();
        prop_assert!((r.fpr - (1.0 - r.tnr)).abs() <= 1e-12);
        prop_assert!((r.detection_accuracy - detection_accuracy(r.tpr, r.tnr).unwrap()).abs() <= 1e-12);
        prop_assert!((r.detection_accuracy - (1.0 - r.detection_error())).abs() <= 1e-12);
        prop_assert!(r.tpr >= t);
    }
}

#[test]
fn overlapping_integer_sets_match_sweep() {
    let id: Vec<f64> = (1..=20).map(f64::from).collect();
    let ood: Vec<f64> = (15..=34).map(f64::from).collect();
    let got = tnr_at_tpr(&ScoreSet::new(id.clone(), ood.clone()), 0.95).unwrap();
    let want = oracle::tnr_at_tpr_sweep(&id, &ood, 0.95);
    assert_eq!(got, want);
    // theta = 19 keeps 19/20 ID; OOD 15..=19 are accepted, 15 of 20 rejected.
    assert_eq!(got, (0.75, 19.0));
}
