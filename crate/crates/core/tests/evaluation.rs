use proptest::prelude::*;
use rand::Rng;
use spm_core::evaluation::{error_at_95, fpr_at_tpr, roc_curve};
use spm_testkit as tk;

fn random_instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut r = tk::rng(seed);
    let n = r.random_range(2..=500);
    // Coarse scores so that ties are common.
    let levels = r.random_range(2..50);
    let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = labels
        .iter()
        .map(|&l| (r.random_range(0..levels) as f64 + l as f64 * 3.0) / levels as f64)
        .collect();
    (scores, labels)
}

#[test]
fn curve_matches_threshold_sweep() {
    for seed in 0..50 {
        let (s, l) = random_instance(seed);
        let curve = roc_curve(&s, &l).unwrap();
        let brute = tk::roc_brute(&s, &l);
        assert_eq!(curve.points.len(), brute.len());
        for (p, (t, tpr, fpr)) in curve.points.iter().zip(&brute) {
            assert_eq!(p.threshold, *t);
            assert!((p.tpr - tpr).abs() <= 1e-12 && (p.fpr - fpr).abs() <= 1e-12);
        }
        let want = tk::fpr_at_recall_brute(&s, &l, 0.95);
        assert!((error_at_95(&curve) - want).abs() <= 1e-12);
    }
}

#[test]
fn perfect_separation_is_zero() {
    let s = [0.9, 0.8, 0.7, 0.2, 0.1];
    let l = [1, 1, 1, 0, 0];
    assert_eq!(error_at_95(&roc_curve(&s, &l).unwrap()), 0.0);
}

#[test]
fn constant_scores_give_target_rate() {
    let s = vec![0.5; 40];
    let l: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    assert!((error_at_95(&roc_curve(&s, &l).unwrap()) - 0.95).abs() <= 1e-12);
}

#[test]
fn inverted_scores_are_worst_case() {
    let s = [0.1, 0.2, 0.8, 0.9];
    let l = [1, 1, 0, 0];
    let c = roc_curve(&s, &l).unwrap();
    assert_eq!(error_at_95(&c), 1.0);
    assert_eq!(c.auc(), 0.0);
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(roc_curve(&[0.1, 0.2], &[1, 1]).is_err());
    assert!(roc_curve(&[0.1, f64::NAN], &[0, 1]).is_err());
    assert!(roc_curve(&[0.1], &[0, 1]).is_err());
}

proptest! {
    #[test]
    fn fpr_is_monotone_in_target(seed in 0u64..10_000) {
        let (s, l) = random_instance(seed);
        let c = roc_curve(&s, &l).unwrap();
        let mut last = 0.0;
        for i in 0..=20 {
            let f = fpr_at_tpr(&c, i as f64 / 20.0);
            prop_assert!(f + 1e-15 >= last && (0.0..=1.0).contains(&f));
            last = f;
        }
        let auc = c.auc();
        prop_assert!((0.0..=1.0).contains(&auc));
    }
}
