use proptest::prelude::*;
use rand::Rng;
use survmtl::metrics::{auprc, auroc, tte_mae};
use survmtl_testkit::ranking::{ap_rank_walk, ap_tie_expectation, auroc_brute_force};
use survmtl_testkit::rng;

/// Integer-valued scores so ties are common.
fn tied_scores(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let side = move || prop::collection::vec((0i32..12).prop_map(f64::from), 1..max_len);
    (side(), side())
}

fn distinct_scores(r: &mut impl Rng, n_pos: usize, n_neg: usize) -> (Vec<f64>, Vec<f64>) {
    let pos = (0..n_pos).map(|_| r.random::<f64>()).collect();
    let neg = (0..n_neg).map(|_| r.random::<f64>() - 0.2).collect();
    (pos, neg)
}

#[test]
fn auprc_matches_the_rank_walk_bitwise_on_distinct_scores() {
    let mut r = rng(3);
    for _ in 0..500 {
        let (np, nn) = (r.random_range(1..60), r.random_range(1..60));
        let (pos, neg) = distinct_scores(&mut r, np, nn);
        assert_eq!(auprc(&pos, &neg).unwrap().to_bits(), ap_rank_walk(&pos, &neg).to_bits());
    }
}

#[test]
fn average_precision_beats_prevalence_on_average() {
    let mut r = rng(9);
    let mut ap = 0.0;
    let mut prevalence = 0.0;
    for _ in 0..400 {
        let (np, nn) = (r.random_range(1..30), r.random_range(1..30));
        let pos: Vec<f64> = (0..np).map(|_| r.random::<f64>()).collect();
        let neg: Vec<f64> = (0..nn).map(|_| r.random::<f64>()).collect();
        ap += auprc(&pos, &neg).unwrap();
        prevalence += np as f64 / (np + nn) as f64;
    }
    assert!(ap >= prevalence, "{ap} < {prevalence}");
}

#[test]
fn constant_midpoint_prediction_has_known_mae() {
    let targets: Vec<f64> = (1..=24).map(f64::from).collect();
    let mae = tte_mae(&[12.0; 24], &targets, &[true; 24]).unwrap();
    assert_eq!(mae, 6.0);
}

#[test]
fn empty_classes_are_errors() {
    assert!(auroc::<f64>(&[], &[1.0]).is_err());
    assert!(auroc::<f64>(&[1.0], &[]).is_err());
    assert!(auprc::<f64>(&[], &[1.0]).is_err());
    assert!(tte_mae::<f64>(&[1.0], &[1.0], &[false]).is_err());
}

proptest! {
    #[test]
    fn auroc_equals_brute_force_with_ties((pos, neg) in tied_scores(100)) {
        prop_assert_eq!(auroc(&pos, &neg).unwrap().to_bits(), auroc_brute_force(&pos, &neg).to_bits());
    }

    #[test]
    fn auroc_is_antisymmetric_in_the_classes((pos, neg) in tied_scores(100)) {
        let sum = auroc(&pos, &neg).unwrap() + auroc(&neg, &pos).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auprc_is_the_tie_breaking_expectation(
        pos in prop::collection::vec((0i32..3).prop_map(f64::from), 1..5),
        neg in prop::collection::vec((0i32..3).prop_map(f64::from), 0..4),
    ) {
        prop_assert!((auprc(&pos, &neg).unwrap() - ap_tie_expectation(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_invariant_to_monotone_maps((pos, neg) in tied_scores(60), shift in -5.0f64..5.0) {
        let f = |v: &f64| (v * 0.3 + shift).exp();
        let (fp, fq): (Vec<f64>, Vec<f64>) = (pos.iter().map(f).collect(), neg.iter().map(f).collect());
        prop_assert_eq!(auroc(&pos, &neg).unwrap(), auroc(&fp, &fq).unwrap());
        prop_assert_eq!(auprc(&pos, &neg).unwrap(), auprc(&fp, &fq).unwrap());
    }

    #[test]
    fn metrics_stay_in_the_unit_interval((pos, neg) in tied_scores(60)) {
        let roc = auroc(&pos, &neg).unwrap();
        let ap = auprc(&pos, &neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&roc));
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }
}
