//! `SPMN` model checkpoints and the per-epoch training log.
//!
//! Layout (little endian): magic, version u32, activation u32, hidden layer
//! count u32 and sizes u32, input_dim u64, per layer fan_in u64, fan_out u64,
//! weights row-major f64, biases f64; then the training config echo
//! (batch_size u64, epochs u64, lr, beta1, beta2, eps, val_ratio as f64,
//! seed u64), init seed u64, config hash u64, and a trailing CRC32.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, AdamConfig, Architecture, Layer, NetworkParams, TrainConfig, TrainHistory};
use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPMN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub train_config: TrainConfig,
    pub config_hash: u64,
}

pub fn checkpoint_to_bytes(c: &Checkpoint) -> Vec<u8> {
    let p = &c.params;
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(p.arch.activation.code());
    w.u32(p.arch.hidden.len() as u32);
    for &h in &p.arch.hidden {
        w.u32(h as u32);
    }
    w.u64(p.input_dim as u64);
    for l in &p.layers {
        w.u64(l.w.nrows() as u64);
        w.u64(l.w.ncols() as u64);
        w.f64s(l.w.iter().copied());
        w.f64s(l.b.iter().copied());
    }
    let t = &c.train_config;
    w.u64(t.batch_size as u64);
    w.u64(t.epochs as u64);
    w.f64(t.adam.lr);
    w.f64(t.adam.beta1);
    w.f64(t.adam.beta2);
    w.f64(t.adam.eps);
    w.f64(t.val_ratio);
    w.u64(t.seed);
    w.u64(p.seed);
    w.u64(c.config_hash);
    w.finish_with_crc()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, true, "model checkpoint")?;
    let activation = Activation::from_code(r.u32()?)?;
    let n_hidden = r.u32()? as usize;
    if n_hidden > r.remaining() / 4 {
        return Err(Error::Corrupt("model checkpoint: bad layer count".into()));
    }
    let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(hidden, activation)?;
    let input_dim = r.u64()? as usize;
    let mut expect_in = input_dim;
    let mut layers = Vec::new();
    for &fan_out in arch.hidden.iter().chain(std::iter::once(&1)) {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if rows != expect_in || cols != fan_out {
            return Err(Error::Corrupt(format!(
                "model checkpoint: layer {} has shape {rows}x{cols}, expected {expect_in}x{fan_out}",
                layers.len()
            )));
        }
        let w = Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?).map_err(|e| Error::Corrupt(e.to_string()))?;
        let b = Array1::from(r.f64s(cols)?);
        layers.push(Layer { w, b });
        expect_in = fan_out;
    }
    let train_config = TrainConfig {
        batch_size: r.u64()? as usize,
        epochs: r.u64()? as usize,
        adam: AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        },
        val_ratio: r.f64()?,
        seed: r.u64()?,
    };
    let seed = r.u64()?;
    let config_hash = r.u64()?;
    r.done()?;
    Ok(Checkpoint {
        params: NetworkParams {
            arch,
            input_dim,
            seed,
            layers,
        },
        train_config,
        config_hash,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    binio::write_file(path, &checkpoint_to_bytes(c))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&binio::read_file(path)?)
}

/// `epoch,train_loss,train_acc,val_acc`, one row per epoch.
pub fn write_history_csv(h: &TrainHistory, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,train_acc,val_acc").unwrap();
    for e in 0..h.epochs() {
        writeln!(out, "{},{},{},{}", e + 1, h.train_loss[e], h.train_acc[e], h.val_acc[e]).unwrap();
    }
    binio::write_file(path, &out)
}
