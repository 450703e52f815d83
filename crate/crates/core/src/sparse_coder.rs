//! Lasso coding of patches against a fixed dictionary by least angle
//! regression.
//!
//! For one patch x the coder minimizes `‖x - Bc‖² + β‖c‖₁`. Dividing by two
//! gives the usual `½‖x - Bc‖² + λ‖c‖₁` with λ = β/2, so the homotopy runs
//! from c = 0 until the common absolute correlation `|b_jᵀ r|` of the active
//! atoms falls to β/2. Active coefficients that hit zero leave the active
//! set (lasso modification); ties go to the lowest atom index.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::binio::{self, Reader, Writer};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.1;

const MAGIC: &[u8; 4] = b"SPMC";
const VERSION: u32 = 1;

/// Sparse coefficient vector of length `k` with explicit support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    k: usize,
    support: Vec<usize>,
    coefs: Vec<f64>,
    pub beta: f64,
}

impl SparseCode {
    pub fn zeros(k: usize, beta: f64) -> Self {
        SparseCode {
            k,
            support: Vec::new(),
            coefs: Vec::new(),
            beta,
        }
    }

    /// Builds a code from `(index, value)` entries; zero values are dropped.
    pub fn from_entries(k: usize, beta: f64, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|e| e.1 != 0.0);
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Format("duplicate index in sparse code".into()));
        }
        if let Some(e) = entries.iter().find(|e| e.0 >= k || !e.1.is_finite()) {
            return Err(Error::Format(format!("bad sparse entry ({}, {}) for k = {k}", e.0, e.1)));
        }
        let (support, coefs) = entries.into_iter().unzip();
        Ok(SparseCode {
            k,
            support,
            coefs,
            beta,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.coefs.iter().copied())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        self.write_dense(&mut v);
        v
    }

    /// Scatters the code into `out`, which must be zeroed and of length k.
    pub fn write_dense(&self, out: &mut [f64]) {
        for (i, c) in self.entries() {
            out[i] = c;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EncodeReport {
    pub mean_reconstruction_error: f64,
    pub mean_support: f64,
    pub wall_time: Duration,
}

/// `‖x - Bc‖² + β‖c‖₁` for a dense coefficient vector.
pub fn lasso_objective(b: &Array2<f64>, x: &[f64], c: &[f64], beta: f64) -> f64 {
    let bc = b.dot(&ArrayView1::from(c));
    let rss: f64 = x.iter().zip(bc.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    rss + beta * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the lasso optimality conditions: `2b_jᵀr = β·sign(c_j)`
/// on the support and `|2b_jᵀr| ≤ β` off it.
pub fn kkt_violation(b: &Array2<f64>, x: &[f64], code: &SparseCode) -> f64 {
    let c = code.values();
    let bc = b.dot(&ArrayView1::from(&c[..]));
    let r: Vec<f64> = x.iter().zip(bc.iter()).map(|(a, b)| a - b).collect();
    let grad = b.t().dot(&ArrayView1::from(&r[..]));
    let beta = code.beta;
    grad.iter()
        .zip(&c)
        .map(|(&g, &cj)| {
            if cj != 0.0 {
                (2.0 * g - beta * cj.signum()).abs()
            } else {
                (2.0 * g.abs() - beta).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Reusable LARS-lasso solver bound to one dictionary and penalty.
#[derive(Debug, Clone)]
pub struct LarsCoder {
    /// Atoms stored contiguously, one per row.
    atoms: Vec<Vec<f64>>,
    usable: Vec<bool>,
    m: usize,
    beta: f64,
}

/// Lower-triangular Cholesky factor of the active Gram matrix, grown one
/// atom at a time.
#[derive(Debug, Default)]
struct GramFactor {
    rows: Vec<Vec<f64>>,
}

impl GramFactor {
    fn forward(&self, rhs: &[f64]) -> Vec<f64> {
        let mut y = rhs.to_vec();
        for i in 0..y.len() {
            let row = &self.rows[i];
            let s: f64 = (0..i).map(|j| row[j] * y[j]).sum();
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut z = self.forward(rhs);
        for i in (0..z.len()).rev() {
            let s: f64 = (i + 1..z.len()).map(|j| self.rows[j][i] * z[j]).sum();
            z[i] = (z[i] - s) / self.rows[i][i];
        }
        z
    }

    /// Appends an atom given its Gram column against the active set and its
    /// squared norm. Returns false if the atom is numerically dependent.
    fn push(&mut self, cross: &[f64], self_dot: f64) -> bool {
        let mut row = self.forward(cross);
        let d2 = self_dot - row.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-12 * self_dot) {
            return false;
        }
        row.push(d2.sqrt());
        self.rows.push(row);
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LarsCoder {
    pub fn new(d: &Dictionary, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("sparsity penalty beta must be > 0, got {beta}")));
        }
        let atoms: Vec<Vec<f64>> = d.b.columns().into_iter().map(|c| c.to_vec()).collect();
        let usable: Vec<bool> = atoms.iter().map(|a| a.iter().any(|&v| v != 0.0)).collect();
        let dead = usable.iter().filter(|u| !**u).count();
        if dead > 0 {
            log::warn!("dictionary has {dead} all-zero atoms; they are skipped during coding");
        }
        Ok(LarsCoder {
            atoms,
            usable,
            m: d.m(),
            beta,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn gram_factor(&self, active: &[usize]) -> GramFactor {
        let mut f = GramFactor::default();
        for (i, &j) in active.iter().enumerate() {
            let cross: Vec<f64> = active[..i].iter().map(|&a| dot(&self.atoms[a], &self.atoms[j])).collect();
            let ok = f.push(&cross, dot(&self.atoms[j], &self.atoms[j]));
            debug_assert!(ok, "active set lost rank on refactorization");
        }
        f
    }

    fn correlations(&self, x: &[f64], active: &[usize], coef: &[f64], out: &mut [f64]) {
        let mut r = x.to_vec();
        for (&j, &c) in active.iter().zip(coef) {
            r.iter_mut().zip(&self.atoms[j]).for_each(|(ri, a)| *ri -= c * a);
        }
        for (o, a) in out.iter_mut().zip(&self.atoms) {
            *o = dot(a, &r);
        }
    }

    /// Solves the lasso for one signal of length m.
    pub fn code(&self, x: &[f64]) -> Result<SparseCode> {
        let k = self.atoms.len();
        if x.len() != self.m {
            return Err(Error::Shape(format!("signal has length {}, dictionary expects {}", x.len(), self.m)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("signal has non-finite entries".into()));
        }
        let lam = 0.5 * self.beta;
        let cap = self.m.min(k);

        let mut corr = vec![0.0; k];
        self.correlations(x, &[], &[], &mut corr);
        let mut eligible = self.usable.clone();

        let mut c_max = 0.0;
        let mut first = None;
        for j in (0..k).filter(|&j| eligible[j]) {
            if corr[j].abs() > c_max {
                c_max = corr[j].abs();
                first = Some(j);
            }
        }
        let Some(first) = first.filter(|_| c_max > lam) else {
            return Ok(SparseCode::zeros(k, self.beta));
        };

        let mut active = vec![first];
        let mut signs = vec![corr[first].signum()];
        let mut coef = vec![0.0];
        let mut factor = self.gram_factor(&active);
        let mut in_active = vec![false; k];
        in_active[first] = true;
        let mut just_dropped: Option<(usize, f64)> = None;
        let mut a = vec![0.0; k];

        for _ in 0..(8 * k + 100) {
            let q = factor.solve(&signs);
            let sq: f64 = dot(&signs, &q);
            if !(sq > 0.0) {
                return Err(Error::Numeric("active Gram matrix lost positive definiteness".into()));
            }
            let aa = 1.0 / sq.sqrt();
            let w: Vec<f64> = q.iter().map(|v| v * aa).collect();
            let mut u = vec![0.0; self.m];
            for (&j, &wj) in active.iter().zip(&w) {
                u.iter_mut().zip(&self.atoms[j]).for_each(|(ui, b)| *ui += wj * b);
            }
            for (aj, atom) in a.iter_mut().zip(&self.atoms) {
                *aj = dot(atom, &u);
            }

            let c_now = active.iter().zip(&signs).map(|(&j, s)| s * corr[j]).sum::<f64>() / active.len() as f64;
            let gamma_end = (c_now - lam) / aa;
            let tiny = 1e-14 * (c_now / aa).abs().max(f64::MIN_POSITIVE);

            let mut gamma_add = f64::INFINITY;
            let mut add = None;
            for j in 0..k {
                if in_active[j] || !eligible[j] {
                    continue;
                }
                // (candidate step, sign the atom would enter with)
                for (num, den, sign) in [(c_now - corr[j], aa - a[j], 1.0), (c_now + corr[j], aa + a[j], -1.0)] {
                    // a just-dropped atom sits exactly on its old bound; it may only
                    // come back with the opposite sign
                    if just_dropped == Some((j, sign)) {
                        continue;
                    }
                    if den.abs() > 1e-300 {
                        let g = num / den;
                        if g > tiny && g < gamma_add {
                            gamma_add = g;
                            add = Some(j);
                        }
                    }
                }
            }
            let mut gamma_drop = f64::INFINITY;
            let mut drop = None;
            for (pos, (&c, &wj)) in coef.iter().zip(&w).enumerate() {
                if wj != 0.0 {
                    let g = -c / wj;
                    if g > tiny && g < gamma_drop {
                        gamma_drop = g;
                        drop = Some(pos);
                    }
                }
            }

            let gamma = gamma_end.min(gamma_add).min(gamma_drop).max(0.0);
            coef.iter_mut().zip(&w).for_each(|(c, wj)| *c += gamma * wj);

            if gamma_end <= gamma_add && gamma_end <= gamma_drop {
                break;
            }
            just_dropped = None;
            if gamma_drop < gamma_add {
                let pos = drop.unwrap();
                let j = active.remove(pos);
                let s = signs.remove(pos);
                coef.remove(pos);
                in_active[j] = false;
                just_dropped = Some((j, s));
                factor = self.gram_factor(&active);
            } else {
                let j = add.unwrap();
                if active.len() >= cap {
                    return Err(Error::Numeric(format!(
                        "active set would exceed min(m, k) = {cap} atoms"
                    )));
                }
                let cross: Vec<f64> = active.iter().map(|&i| dot(&self.atoms[i], &self.atoms[j])).collect();
                if factor.push(&cross, dot(&self.atoms[j], &self.atoms[j])) {
                    let cj = corr[j] - gamma * a[j];
                    active.push(j);
                    signs.push(if cj >= 0.0 { 1.0 } else { -1.0 });
                    coef.push(0.0);
                    in_active[j] = true;
                } else {
                    // atom lies in the span of the active set
                    eligible[j] = false;
                }
            }
            self.correlations(x, &active, &coef, &mut corr);
            if active.is_empty() {
                break;
            }
        }

        if !active.is_empty() {
            self.polish(x, &active, &signs, &mut coef, lam, &factor);
        }
        let entries = active.into_iter().zip(coef).collect();
        SparseCode::from_entries(k, self.beta, entries)
    }

    /// Re-solves the stationarity equations on the final active set
    /// `B_Aᵀ(x - B_A c_A) = λ s_A` and keeps the result when it is sign
    /// consistent; this removes drift accumulated along the path.
    fn polish(&self, x: &[f64], active: &[usize], signs: &[f64], coef: &mut [f64], lam: f64, factor: &GramFactor) {
        let rhs: Vec<f64> = active
            .iter()
            .zip(signs)
            .map(|(&j, s)| dot(&self.atoms[j], x) - lam * s)
            .collect();
        let exact = factor.solve(&rhs);
        let consistent = exact.iter().zip(signs).all(|(c, s)| c * s > 0.0);
        if consistent && exact.iter().all(|v| v.is_finite()) {
            coef.copy_from_slice(&exact);
        }
    }
}

/// Lasso code of one patch vector.
pub fn lars_lasso(d: &Dictionary, x: &[f64], beta: f64) -> Result<SparseCode> {
    LarsCoder::new(d, beta)?.code(x)
}

/// Codes every column of `x` (m×n). Output order follows the columns.
pub fn encode_batch(d: &Dictionary, x: &Array2<f64>, beta: f64) -> Result<(Vec<SparseCode>, EncodeReport)> {
    let start = Instant::now();
    let coder = LarsCoder::new(d, beta)?;
    if x.nrows() != d.m() && x.ncols() > 0 {
        return Err(Error::Shape(format!(
            "data has dimension {}, dictionary expects {}",
            x.nrows(),
            d.m()
        )));
    }
    let n = x.ncols();
    let results: Vec<(SparseCode, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col = x.column(i).to_vec();
            let code = coder.code(&col).map_err(|e| Error::Column {
                index: i,
                source: Box::new(e),
            })?;
            let c = code.values();
            let bc = d.b.dot(&ArrayView1::from(&c[..]));
            let err = col.iter().zip(bc.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok((code, err))
        })
        .collect::<Result<_>>()?;
    let mut report = EncodeReport::default();
    if n > 0 {
        report.mean_reconstruction_error = results.iter().map(|r| r.1).sum::<f64>() / n as f64;
        report.mean_support = results.iter().map(|r| r.0.nnz() as f64).sum::<f64>() / n as f64;
    }
    report.wall_time = start.elapsed();
    Ok((results.into_iter().map(|r| r.0).collect(), report))
}

/// Codes of a set of patches as stored in an `SPMC` file.
///
/// Layout (little endian): magic, version u32, k u64, beta f64, n u64,
/// config hash u64, then per code u32 nnz followed by nnz × (u32 index,
/// f64 value), then a CRC32 of all preceding bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub k: usize,
    pub beta: f64,
    pub config_hash: u64,
    pub codes: Vec<SparseCode>,
}

pub fn encoded_to_bytes(set: &EncodedSet) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u64(set.k as u64);
    w.f64(set.beta);
    w.u64(set.codes.len() as u64);
    w.u64(set.config_hash);
    for code in &set.codes {
        w.u32(code.nnz() as u32);
        for (i, v) in code.entries() {
            w.u32(i as u32);
            w.f64(v);
        }
    }
    w.finish_with_crc()
}

pub fn encoded_from_bytes(bytes: &[u8]) -> Result<EncodedSet> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, true, "encoded codes")?;
    let k = r.u64()? as usize;
    let beta = r.f64()?;
    let n = r.u64()? as usize;
    let config_hash = r.u64()?;
    let mut codes = Vec::with_capacity(n.min(r.remaining() / 4));
    for _ in 0..n {
        let nnz = r.u32()? as usize;
        if nnz > k || r.remaining() < nnz * 12 {
            return Err(Error::Corrupt("encoded codes: bad nonzero count".into()));
        }
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let i = r.u32()? as usize;
            entries.push((i, r.f64()?));
        }
        codes.push(SparseCode::from_entries(k, beta, entries).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    r.done()?;
    Ok(EncodedSet {
        k,
        beta,
        config_hash,
        codes,
    })
}

pub fn save_encoded(set: &EncodedSet, path: &Path) -> Result<()> {
    binio::write_file(path, &encoded_to_bytes(set))
}

pub fn load_encoded(path: &Path) -> Result<EncodedSet> {
    encoded_from_bytes(&binio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dict(b: Array2<f64>) -> Dictionary {
        Dictionary::new(b, 0.1).unwrap()
    }

    #[test]
    fn scalar_soft_threshold() {
        let c = lars_lasso(&dict(array![[1.0]]), &[1.0], 1.0).unwrap();
        assert_eq!(c.support(), &[0]);
        assert!((c.values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn large_beta_gives_zero() {
        let d = dict(array![[1.0, 0.5], [0.0, 2.0]]);
        let x = [0.3, -0.7];
        let bound = 2.0 * d.b.t().dot(&ArrayView1::from(&x[..])).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let c = lars_lasso(&d, &x, bound).unwrap();
        assert_eq!(c.nnz(), 0);
        assert!(lars_lasso(&d, &x, bound * 0.99).unwrap().nnz() > 0);
    }

    #[test]
    fn orthonormal_dictionary_soft_thresholds() {
        let s = 0.5f64.sqrt();
        let b = array![[s, s, 0.0], [s, -s, 0.0], [0.0, 0.0, 1.0]];
        let x = [0.9, 0.1, -0.4];
        let beta = 0.3;
        let c = lars_lasso(&dict(b.clone()), &x, beta).unwrap().values();
        for j in 0..3 {
            let p: f64 = (0..3).map(|i| b[[i, j]] * x[i]).sum();
            let want = p.signum() * (p.abs() - beta / 2.0).max(0.0);
            assert!((c[j] - want).abs() < 1e-14, "atom {j}: {} vs {want}", c[j]);
        }
    }

    #[test]
    fn bad_beta_and_shape() {
        let d = dict(array![[1.0]]);
        assert!(matches!(lars_lasso(&d, &[1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(lars_lasso(&d, &[1.0], -1.0), Err(Error::Config(_))));
        assert!(matches!(lars_lasso(&d, &[1.0, 2.0], 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_atom_is_skipped() {
        let d = dict(array![[0.0, 1.0], [0.0, 0.0]]);
        let c = lars_lasso(&d, &[1.0, 0.0], 0.2).unwrap();
        assert_eq!(c.support(), &[1]);
        assert!((c.values()[1] - 0.9).abs() < 1e-14);
    }

    #[test]
    fn batch_edge_cases() {
        let d = dict(array![[1.0, 0.2], [0.1, 1.0]]);
        let (codes, report) = encode_batch(&d, &Array2::zeros((2, 0)), 0.1).unwrap();
        assert!(codes.is_empty());
        assert_eq!(report.mean_support, 0.0);
        assert_eq!(report.mean_reconstruction_error, 0.0);

        let x = array![[0.5, 0.5, 0.5], [0.8, 0.8, 0.8]];
        let (codes, _) = encode_batch(&d, &x, 0.1).unwrap();
        assert_eq!(codes[0], codes[1]);
        assert_eq!(codes[1], codes[2]);
    }

    #[test]
    fn sparse_code_entries() {
        let c = SparseCode::from_entries(5, 0.1, vec![(3, 2.0), (1, -1.0), (4, 0.0)]).unwrap();
        assert_eq!(c.support(), &[1, 3]);
        assert_eq!(c.values(), vec![0.0, -1.0, 0.0, 2.0, 0.0]);
        assert!(SparseCode::from_entries(5, 0.1, vec![(5, 1.0)]).is_err());
        assert!(SparseCode::from_entries(5, 0.1, vec![(1, 1.0), (1, 2.0)]).is_err());
    }
}
