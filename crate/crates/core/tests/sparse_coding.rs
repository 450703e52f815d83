use ndarray::Array2;
use proptest::prelude::*;
use spm_core::dictionary::{fit_dictionary, ridge_objective, Dictionary};
use spm_core::sparse_coder::{encode_batch, kkt_violation, lars_lasso, lasso_objective, LarsCoder, SparseCode};
use spm_testkit as tk;

fn instance(seed: u64, m: usize, k: usize) -> (Dictionary, Vec<f64>) {
    let mut r = tk::rng(seed);
    let b = tk::random_matrix(&mut r, m, k);
    let x = tk::random_vec(&mut r, m);
    (Dictionary::new(b, 0.0).unwrap(), x)
}

#[test]
fn lars_matches_support_enumeration() {
    for seed in 0..200 {
        let m = 3 + (seed % 4) as usize;
        let k = 4 + (seed % 5) as usize;
        let (d, x) = instance(seed, m, k);
        for beta in [0.05, 0.3, 1.0] {
            let code = lars_lasso(&d, &x, beta).unwrap();
            let (_, best) = tk::lasso_brute_force(&d.b, &x, beta);
            let got = lasso_objective(&d.b, &x, &code.values(), beta);
            assert!((got - best).abs() <= 1e-9 * (1.0 + best), "seed {seed} beta {beta}: {got} vs {best}");
        }
    }
}

#[test]
fn lars_matches_coordinate_descent_overcomplete() {
    for seed in 0..20 {
        let (d, x) = instance(1000 + seed, 10, 25);
        let code = lars_lasso(&d, &x, 0.1).unwrap();
        let cd = tk::lasso_coordinate_descent(&d.b, &x, 0.1, 1e-14, 200_000);
        let a = tk::lasso_objective(&d.b, &x, &code.values(), 0.1);
        let b = tk::lasso_objective(&d.b, &x, &cd, 0.1);
        assert!(a <= b + 1e-9, "seed {seed}: lars {a} cd {b}");
        assert!(kkt_violation(&d.b, &x, &code) <= 1e-8);
    }
}

#[test]
fn support_shrinks_as_beta_grows() {
    let (d, x) = instance(77, 12, 30);
    let mut last = usize::MAX;
    for beta in [0.01, 0.1, 0.5, 2.0, 10.0] {
        let nnz = lars_lasso(&d, &x, beta).unwrap().nnz();
        assert!(nnz <= last);
        last = nnz;
    }
    // Past the largest correlation everything is zero.
    let max_corr = d.b.t().dot(&ndarray::ArrayView1::from(&x[..])).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert_eq!(lars_lasso(&d, &x, 2.0 * max_corr + 1e-9).unwrap().nnz(), 0);
}

#[test]
fn support_never_exceeds_signal_dimension() {
    let (d, x) = instance(5, 6, 40);
    let code = lars_lasso(&d, &x, 1e-6).unwrap();
    assert!(code.nnz() <= 6);
    assert!(kkt_violation(&d.b, &x, &code) <= 1e-8);
}

#[test]
fn coder_is_reusable_and_batch_matches_single() {
    let mut r = tk::rng(8);
    let b = tk::random_matrix(&mut r, 8, 20);
    let xs = tk::random_matrix(&mut r, 8, 30);
    let d = Dictionary::new(b, 0.1).unwrap();
    let coder = LarsCoder::new(&d, 0.2).unwrap();
    let (batch, report) = encode_batch(&d, &xs, 0.2).unwrap();
    assert_eq!(batch.len(), 30);
    for (i, code) in batch.iter().enumerate() {
        let col = xs.column(i).to_vec();
        assert_eq!(code, &coder.code(&col).unwrap());
    }
    let mean_nnz = batch.iter().map(SparseCode::nnz).sum::<usize>() as f64 / 30.0;
    assert!((report.mean_support - mean_nnz).abs() < 1e-12);
}

#[test]
fn zero_signal_gives_zero_code() {
    let (d, _) = instance(4, 5, 9);
    let code = lars_lasso(&d, &[0.0; 5], 0.1).unwrap();
    assert_eq!(code.nnz(), 0);
}

#[test]
fn ridge_fit_matches_gradient_descent() {
    for seed in 0..8 {
        let mut r = tk::rng(500 + seed);
        let (m, n, k) = (5, 20, 4);
        let x = tk::random_matrix(&mut r, m, n);
        let y = tk::random_matrix(&mut r, n, k);
        let d = fit_dictionary(&x, &y, 0.1).unwrap();
        let gd = tk::ridge_gradient_descent(&x, &y, 0.1, 20_000);
        let a = ridge_objective(&x, &y, &d.b, 0.1);
        let b = tk::ridge_objective(&x, &y, &gd, 0.1);
        assert!((a - b).abs() <= 1e-8, "seed {seed}: {a} vs {b}");
        // (XXᵀ + αI)B = XY
        let lhs = (x.dot(&x.t()) + Array2::<f64>::eye(m) * 0.1).dot(&d.b);
        let rhs = x.dot(&y);
        let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let res = (&lhs - &rhs).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(res <= 1e-8 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kkt_holds_on_random_instances(seed in 0u64..100_000, m in 1usize..=20, k in 1usize..=40, beta in 0.001f64..2.0) {
        let (d, x) = instance(seed, m, k);
        let code = lars_lasso(&d, &x, beta).unwrap();
        prop_assert!(kkt_violation(&d.b, &x, &code) <= 1e-8);
        prop_assert!(code.nnz() <= m.min(k));
    }
}
