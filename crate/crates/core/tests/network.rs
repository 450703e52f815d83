use ndarray::{Array1, Array2};
use spm_core::evaluation::evaluate_model;
use spm_core::matcher_net::{checkpoint_from_bytes, checkpoint_to_bytes, Checkpoint};
use spm_core::matcher_net::{stratified_split, train, PairSample, TrainConfig};
use spm_core::matcher_net::{
    backward, bce_loss, forward, init_network, predict_pair, Activation, Architecture, NetworkParams,
};
use spm_core::sparse_coder::SparseCode;
use spm_testkit as tk;

fn flatten(p: &NetworkParams) -> Vec<f64> {
    p.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
}

fn unflatten(p: &mut NetworkParams, v: &[f64]) {
    let mut it = v.iter();
    for l in &mut p.layers {
        l.w.iter_mut().chain(l.b.iter_mut()).for_each(|x| *x = *it.next().unwrap());
    }
}

fn grad_check(arch: Architecture, input_dim: usize, seed: u64) -> f64 {
    let mut p = init_network(&arch, input_dim, seed).unwrap();
    let mut r = tk::rng(seed + 1);
    // Zero biases behind a fully dead ReLU layer put the next pre-activation
    // exactly on the kink, where central differences see slope 1/2.
    for l in &mut p.layers {
        let n = l.b.len();
        l.b.assign(&ndarray::Array1::from(tk::random_vec(&mut r, n)));
        l.b *= 0.1;
    }
    let batch = tk::random_matrix(&mut r, 7, input_dim);
    let labels: Vec<f64> = (0..7).map(|i| (i % 2) as f64).collect();
    let (g, _) = backward(&p, batch.view(), &labels).unwrap();
    let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect();
    let theta = flatten(&p);
    let numeric = tk::central_differences(
        |v| {
            unflatten(&mut p, v);
            bce_loss(forward(&p, batch.view()).unwrap().as_slice().unwrap(), &labels).unwrap()
        },
        &theta,
        1e-5,
    );
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| tk::relative_error(*a, *n, 1e-4))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences() {
    let archs = [
        Architecture::new(vec![1000], Activation::Relu).unwrap(),
        Architecture::new(vec![6, 5], Activation::Tanh).unwrap(),
        Architecture::new(vec![9, 4, 3], Activation::Relu).unwrap(),
    ];
    for (i, a) in archs.into_iter().enumerate() {
        let err = grad_check(a, 12, 40 + i as u64);
        assert!(err <= 1e-5, "arch {i}: {err:e}");
    }
}

#[test]
fn constant_half_predictor_has_ln2_loss() {
    let pred = vec![0.5; 10];
    let labels: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
    assert!((bce_loss(&pred, &labels).unwrap() - std::f64::consts::LN_2).abs() <= 1e-12);
}

#[test]
fn output_delta_is_prediction_minus_label() {
    // No hidden layer to speak of: bias gradient of the output unit is the
    // mean of ŷ - y.
    let p = init_network(&Architecture::new(vec![3], Activation::Tanh).unwrap(), 4, 3).unwrap();
    let batch = tk::random_matrix(&mut tk::rng(3), 5, 4);
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0];
    let pred = forward(&p, batch.view()).unwrap();
    let (g, _) = backward(&p, batch.view(), &labels).unwrap();
    let want: f64 = pred.iter().zip(labels).map(|(a, y)| a - y).sum::<f64>() / 5.0;
    assert!((g.layers.last().unwrap().b[0] - want).abs() <= 1e-12);
}

fn one_hot(k: usize, j: usize) -> SparseCode {
    SparseCode::from_entries(k, 0.1, vec![(j, 1.0)]).unwrap()
}

/// Pairs are matches exactly when both codes light the same atom.
fn separable(n: usize, k: usize, seed: u64) -> Vec<PairSample> {
    use rand::Rng;
    let mut r = tk::rng(seed);
    (0..n)
        .map(|i| {
            let a = r.random_range(0..k);
            let b = if i % 2 == 0 { a } else { (a + r.random_range(1..k)) % k };
            PairSample {
                code_a: one_hot(k, a),
                code_b: one_hot(k, b),
                label: (i % 2 == 0) as u8,
            }
        })
        .collect()
}

#[test]
fn training_fits_separable_pairs() {
    let data = separable(400, 6, 1);
    let arch = Architecture::new(vec![32], Activation::Relu).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        adam: spm_core::matcher_net::AdamConfig { lr: 0.01, ..Default::default() },
        seed: 4,
        ..Default::default()
    };
    let (p, hist) = train(&data, &arch, &cfg).unwrap();
    assert!(hist.train_loss.last().unwrap() < &(0.1 * hist.train_loss[0]));
    assert!(predict_pair(&p, &one_hot(6, 2), &one_hot(6, 2)).unwrap() > 0.5);
    assert!(predict_pair(&p, &one_hot(6, 2), &one_hot(6, 4)).unwrap() < 0.5);
    let eval = evaluate_model(&p, &separable(100, 6, 2)).unwrap();
    assert_eq!(eval.error95, 0.0);

    let (again, hist2) = train(&data, &arch, &cfg).unwrap();
    assert_eq!(p, again);
    assert_eq!(hist.val_loss, hist2.val_loss);
}

#[test]
fn split_is_stratified_and_disjoint() {
    let labels: Vec<u8> = (0..100).map(|i| (i % 4 == 0) as u8).collect();
    let (tr, va) = stratified_split(&labels, 0.2, 9);
    assert_eq!(tr.len() + va.len(), 100);
    assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 5);
    assert_eq!(va.iter().filter(|&&i| labels[i] == 0).count(), 15);
    let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
    all.sort();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
}

#[test]
fn one_class_training_is_rejected() {
    let mut data = separable(20, 4, 0);
    data.iter_mut().for_each(|s| s.label = 1);
    let arch = Architecture::new(vec![4], Activation::Relu).unwrap();
    assert!(train(&data, &arch, &TrainConfig::default()).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let p = init_network(&Architecture::arch1(), 10, 5).unwrap();
    let ck = Checkpoint {
        params: p.clone(),
        train_config: TrainConfig::default(),
        config_hash: 0xfeed,
    };
    let bytes = checkpoint_to_bytes(&ck);
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    let x = Array2::from_shape_fn((3, 10), |(i, j)| (i * j) as f64 / 10.0);
    let a: Array1<f64> = forward(&p, x.view()).unwrap();
    let b = forward(&back.params, x.view()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn input_width_mismatch_names_layer_zero() {
    let p = init_network(&Architecture::arch2(), 8, 0).unwrap();
    let err = forward(&p, Array2::zeros((2, 9)).view()).unwrap_err();
    assert!(err.to_string().contains("layer 0"));
}
