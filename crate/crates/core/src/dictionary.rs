//! Ridge fit of the basis matrix against a flat embedding, plus the `SPMD`
//! artifact format.
//!
//! `SPMD` layout (little endian): magic, version u32, m u64, k u64, alpha
//! f64, meta entry count u32, then per entry a length-prefixed UTF-8 key and
//! value, then B row-major as f64, then a CRC32 of all preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use ndarray::Array2;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.1;

const MAGIC: &[u8; 4] = b"SPMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// m×k basis, one atom per column.
    pub b: Array2<f64>,
    pub alpha: f64,
    /// Provenance (dataset, seed, p, t, mode, n, config hash, ...).
    pub meta: BTreeMap<String, String>,
}

impl Dictionary {
    pub fn new(b: Array2<f64>, alpha: f64) -> Result<Self> {
        if b.ncols() == 0 || b.nrows() == 0 {
            return Err(Error::Shape(format!("empty dictionary {}x{}", b.nrows(), b.ncols())));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dictionary has non-finite entries".into()));
        }
        Ok(Dictionary {
            b,
            alpha,
            meta: BTreeMap::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_overcomplete(&self) -> bool {
        self.k() > self.m()
    }

    /// "undercomplete", "complete" or "overcomplete".
    pub fn completeness(&self) -> &'static str {
        match self.k().cmp(&self.m()) {
            std::cmp::Ordering::Less => "undercomplete",
            std::cmp::Ordering::Equal => "complete",
            std::cmp::Ordering::Greater => "overcomplete",
        }
    }

    /// Rescales every nonzero atom to unit ℓ2 norm. This changes the coding
    /// model: codes against the rescaled atoms are not rescaled codes of the
    /// original ones once the ℓ1 penalty is active.
    pub fn normalize_columns(&mut self) {
        for mut col in self.b.columns_mut() {
            let nrm = col.dot(&col).sqrt();
            if nrm > 0.0 {
                col.mapv_inplace(|v| v / nrm);
            }
        }
    }
}

/// `‖Y - XᵀB‖²_F + α‖B‖²_F` for data X (m×n), target Y (n×k), basis B (m×k).
pub fn ridge_objective(x: &Array2<f64>, y: &Array2<f64>, b: &Array2<f64>, alpha: f64) -> f64 {
    let r = y - &x.t().dot(b);
    r.iter().map(|v| v * v).sum::<f64>() + alpha * b.iter().map(|v| v * v).sum::<f64>()
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Closed-form ridge fit `B = (XXᵀ + αI)⁻¹ X Y` via a Cholesky solve.
pub fn fit_dictionary(x: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Result<Dictionary> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    if x.ncols() != y.nrows() {
        return Err(Error::Shape(format!(
            "data has {} columns but the embedding has {} rows",
            x.ncols(),
            y.nrows()
        )));
    }
    let m = x.nrows();
    let mut gram = x.dot(&x.t());
    for i in 0..m {
        gram[[i, i]] += alpha;
    }
    let rhs = x.dot(y);

    let singular = || {
        Error::Numeric(format!(
            "ridge system (XXᵀ + αI) is singular or indefinite with alpha = {alpha}; use alpha > 0"
        ))
    };
    let chol = Cholesky::new(to_na(&gram)).ok_or_else(singular)?;
    let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|v| v * v).collect();
    let hi = diag.iter().cloned().fold(0.0, f64::max);
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lo > 1e-13 * hi) {
        return Err(singular());
    }
    let sol = chol.solve(&to_na(&rhs));
    let b = Array2::from_shape_fn((m, y.ncols()), |(i, j)| sol[(i, j)]);
    Dictionary::new(b, alpha)
}

pub fn dictionary_to_bytes(d: &Dictionary) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u64(d.m() as u64);
    w.u64(d.k() as u64);
    w.f64(d.alpha);
    w.u32(d.meta.len() as u32);
    for (k, v) in &d.meta {
        w.str(k);
        w.str(v);
    }
    w.f64s(d.b.iter().copied());
    w.finish_with_crc()
}

pub fn dictionary_from_bytes(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, true, "dictionary")?;
    let m = r.u64()? as usize;
    let k = r.u64()? as usize;
    let alpha = r.f64()?;
    let entries = r.u32()?;
    let mut meta = BTreeMap::new();
    for _ in 0..entries {
        let key = r.str()?;
        meta.insert(key, r.str()?);
    }
    let data = r.f64s(m.checked_mul(k).ok_or_else(|| Error::Corrupt("dictionary: bad shape".into()))?)?;
    r.done()?;
    let b = Array2::from_shape_vec((m, k), data).map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut d = Dictionary::new(b, alpha)?;
    d.meta = meta;
    Ok(d)
}

pub fn save_dictionary(d: &Dictionary, path: &Path) -> Result<()> {
    binio::write_file(path, &dictionary_to_bytes(d))
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    dictionary_from_bytes(&binio::read_file(path)?)
}
