use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, backward, bce_loss, forward, init_network, pair_input, AdamConfig, AdamState, Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::sparse_coder::SparseCode;

/// One labeled pair of codes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub code_a: SparseCode,
    pub code_b: SparseCode,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Fraction of samples held out for validation; 0.2 is a 1:4
    /// validation:training split.
    pub val_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 50,
            adam: AdamConfig::default(),
            val_ratio: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return Err(Error::Config(format!("validation ratio must lie in (0,1), got {}", self.val_ratio)));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("invalid Adam hyper-parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// Epoch (1-based) whose parameters were returned; 0 means the initial ones.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Seeded stratified split into (train, validation) indices. Each class
/// sends `round(ratio · n_c)` samples to validation, clamped so both sides
/// keep at least one sample of it.
pub fn stratified_split(labels: &[u8], ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        shuffle(&mut idx, &mut rng);
        let n = idx.len();
        let n_val = if n >= 2 {
            ((ratio * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

fn design_matrix(samples: &[PairSample], idx: &[usize], input_dim: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut x = Array2::zeros((idx.len(), input_dim));
    let mut y = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        let s = &samples[i];
        x.row_mut(r).assign(&pair_input(&s.code_a, &s.code_b)?);
        y.push(f64::from(s.label));
    }
    Ok((x, y))
}

fn loss_and_accuracy(p: &NetworkParams, x: &Array2<f64>, y: &[f64]) -> Result<(f64, f64)> {
    let pred = forward(p, x.view())?;
    let loss = bce_loss(pred.as_slice().unwrap(), y)?;
    let hits = pred.iter().zip(y).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
    Ok((loss, hits as f64 / y.len() as f64))
}

/// Trains a matcher on labeled code pairs.
///
/// The split and per-epoch shuffles are seeded from `cfg.seed`. Returns the
/// parameters with the best validation accuracy (ties broken by lower
/// validation loss, then by the earlier epoch).
pub fn train(samples: &[PairSample], arch: &Architecture, cfg: &TrainConfig) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    let k = samples.first().map(|s| s.code_a.k()).unwrap_or(0);
    if samples.iter().any(|s| s.code_a.k() != k || s.code_b.k() != k) {
        return Err(Error::Shape("pair samples have inconsistent code lengths".into()));
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(Error::Training("labels must be 0 or 1".into()));
    }
    if pos < 2 || neg < 2 {
        return Err(Error::Training(format!(
            "need at least 2 samples of each class, got {pos} positive and {neg} negative"
        )));
    }
    let input_dim = 2 * k;
    let mut params = init_network(arch, input_dim, cfg.seed)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((params, history));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a17_c0de_0000_0001);
    let (train_idx, val_idx) = stratified_split(&labels, cfg.val_ratio, rng.random());
    let (x_train, y_train) = design_matrix(samples, &train_idx, input_dim)?;
    let (x_val, y_val) = design_matrix(samples, &val_idx, input_dim)?;

    let mut state = AdamState::new(&params);
    let mut step = 0u64;
    let (l0, a0) = loss_and_accuracy(&params, &x_val, &y_val)?;
    let mut best = (a0, l0, params.clone());

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_train.select(ndarray::Axis(0), chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let (grads, _) = backward(&params, xb.view(), &yb)?;
            step += 1;
            adam_step(&mut params, &grads, &mut state, &cfg.adam, step);
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        let (tl, ta) = loss_and_accuracy(&params, &x_train, &y_train)?;
        let (vl, va) = loss_and_accuracy(&params, &x_val, &y_val)?;
        history.train_loss.push(tl);
        history.train_acc.push(ta);
        history.val_loss.push(vl);
        history.val_acc.push(va);
        if va > best.0 || (va == best.0 && vl < best.1) {
            best = (va, vl, params.clone());
            history.best_epoch = epoch;
        }
        log::debug!("epoch {epoch}: loss {tl:.5} acc {ta:.4} val_acc {va:.4}");
    }
    Ok((best.2, history))
}
