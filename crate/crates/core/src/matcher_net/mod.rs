//! Fully-connected pair classifier over concatenated sparse codes.
//!
//! Hidden layers use ReLU (or tanh), the single output unit a sigmoid, and
//! the network is trained on mean binary cross-entropy with Adam.

mod checkpoint;
mod train;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, write_history_csv, Checkpoint};
pub use train::{stratified_split, train, PairSample, TrainConfig, TrainHistory};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse_coder::SparseCode;

/// Clamp applied to predictions inside the loss.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    /// Three hidden layers of 500, 80 and 4 units.
    pub fn arch1() -> Self {
        Architecture {
            hidden: vec![500, 80, 4],
            activation: Activation::Relu,
        }
    }

    /// One hidden layer of 1000 units.
    pub fn arch2() -> Self {
        Architecture {
            hidden: vec![1000],
            activation: Activation::Relu,
        }
    }

    pub fn new(hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        Ok(Architecture { hidden, activation })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// fan_in × fan_out.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub input_dim: usize,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Layer shapes as (fan_in, fan_out).
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.w.dim()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Fan-in scaled uniform weights, zero biases. Hidden ReLU layers use the
/// bound sqrt(6/fan_in), every other layer sqrt(3/fan_in).
pub fn init_network(arch: &Architecture, input_dim: usize, seed: u64) -> Result<NetworkParams> {
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be >= 1".into()));
    }
    if arch.hidden.contains(&0) {
        return Err(Error::Config("hidden layer sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![input_dim];
    sizes.extend(&arch.hidden);
    sizes.push(1);
    let last = sizes.len() - 2;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(li, s)| {
            let (fan_in, fan_out) = (s[0], s[1]);
            let gain = if li < last && arch.activation == Activation::Relu {
                6.0
            } else {
                3.0
            };
            let bound = (gain / fan_in as f64).sqrt();
            Layer {
                w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound)),
                b: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(NetworkParams {
        arch: arch.clone(),
        input_dim,
        seed,
        layers,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_batch(p: &NetworkParams, batch: &ArrayView2<f64>) -> Result<()> {
    if batch.ncols() != p.input_dim {
        return Err(Error::Shape(format!(
            "layer 0 expects {} inputs, batch has width {}",
            p.input_dim,
            batch.ncols()
        )));
    }
    for (i, pair) in p.layers.windows(2).enumerate() {
        if pair[0].w.ncols() != pair[1].w.nrows() || pair[0].b.len() != pair[0].w.ncols() {
            return Err(Error::Shape(format!("layer {i} output does not chain into layer {}", i + 1)));
        }
    }
    Ok(())
}

/// Activations of every layer, input first; the last entry is the sigmoid
/// output as a B×1 matrix.
fn forward_all(p: &NetworkParams, batch: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut acts = vec![batch.to_owned()];
    let last = p.layers.len() - 1;
    for (li, layer) in p.layers.iter().enumerate() {
        let mut z = acts[li].dot(&layer.w);
        z += &layer.b;
        if li == last {
            z.mapv_inplace(sigmoid);
        } else {
            let act = p.arch.activation;
            z.mapv_inplace(|v| act.apply(v));
        }
        acts.push(z);
    }
    acts
}

/// Match probabilities for each row of `batch` (B × input_dim).
pub fn forward(p: &NetworkParams, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_batch(p, &batch)?;
    Ok(forward_all(p, batch).pop().unwrap().column(0).to_owned())
}

/// Mean binary cross-entropy; predictions are clamped to
/// [BCE_EPS, 1 - BCE_EPS].
pub fn bce_loss(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "loss needs equal non-empty lengths, got {} predictions and {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / pred.len() as f64)
}

/// dE/dW and dE/db for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Gradients of the mean BCE over the batch, plus the loss itself.
pub fn backward(p: &NetworkParams, batch: ArrayView2<f64>, labels: &[f64]) -> Result<(Gradients, f64)> {
    check_batch(p, &batch)?;
    if labels.len() != batch.nrows() {
        return Err(Error::Shape(format!(
            "batch has {} rows but {} labels",
            batch.nrows(),
            labels.len()
        )));
    }
    let n = batch.nrows() as f64;
    let acts = forward_all(p, batch);
    let out = acts.last().unwrap().column(0).to_vec();
    let loss = bce_loss(&out, labels)?;

    // sigmoid + BCE: dE/dz = (ŷ - y) / N
    let mut delta = Array2::from_shape_fn((out.len(), 1), |(i, _)| (out[i] - labels[i]) / n);
    let mut grads: Vec<Layer> = Vec::with_capacity(p.layers.len());
    for li in (0..p.layers.len()).rev() {
        let a_in = &acts[li];
        let gw = a_in.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        if li > 0 {
            let mut prev = delta.dot(&p.layers[li].w.t());
            let act = p.arch.activation;
            prev.zip_mut_with(a_in, |d, &a| *d *= act.grad_from_output(a));
            delta = prev;
        }
        grads.push(Layer { w: gw, b: gb });
    }
    grads.reverse();
    Ok((Gradients { layers: grads }, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
}

impl AdamState {
    pub fn new(p: &NetworkParams) -> Self {
        let zeros: Vec<Layer> = p
            .layers
            .iter()
            .map(|l| Layer {
                w: Array2::zeros(l.w.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(p: &mut NetworkParams, g: &Gradients, state: &mut AdamState, cfg: &AdamConfig, step: u64) {
    assert!(step >= 1, "Adam step index starts at 1");
    let c1 = 1.0 - cfg.beta1.powf(step as f64);
    let c2 = 1.0 - cfg.beta2.powf(step as f64);
    let update = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * grad;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * grad * grad;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *param -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    };
    for (li, layer) in p.layers.iter_mut().enumerate() {
        let (gl, ml, vl) = (&g.layers[li], &mut state.m[li], &mut state.v[li]);
        ndarray::Zip::from(&mut layer.w)
            .and(&gl.w)
            .and(&mut ml.w)
            .and(&mut vl.w)
            .for_each(|w, &gr, m, v| update(w, gr, m, v));
        ndarray::Zip::from(&mut layer.b)
            .and(&gl.b)
            .and(&mut ml.b)
            .and(&mut vl.b)
            .for_each(|b, &gr, m, v| update(b, gr, m, v));
    }
}

/// Dense concatenation `[a, b]` of two codes.
pub fn pair_input(a: &SparseCode, b: &SparseCode) -> Result<Array1<f64>> {
    if a.k() != b.k() {
        return Err(Error::Shape(format!("code lengths differ: {} vs {}", a.k(), b.k())));
    }
    let k = a.k();
    let mut v = Array1::zeros(2 * k);
    let s = v.as_slice_mut().unwrap();
    a.write_dense(&mut s[..k]);
    b.write_dense(&mut s[k..]);
    Ok(v)
}

/// Match score of an ordered pair; `score(a, b)` may differ from `score(b, a)`.
pub fn predict_pair(p: &NetworkParams, a: &SparseCode, b: &SparseCode) -> Result<f64> {
    if 2 * a.k() != p.input_dim {
        return Err(Error::Shape(format!(
            "network expects codes of length {}, got {}",
            p.input_dim / 2,
            a.k()
        )));
    }
    let x = pair_input(a, b)?;
    let out = forward(p, x.view().insert_axis(Axis(0)))?;
    Ok(out[0])
}
