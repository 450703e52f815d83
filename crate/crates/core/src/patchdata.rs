//! Patch sheets, match files and synthetic pair datasets.
//!
//! UBC photo-tour subsets ship as bitmap sheets holding a 16×16 grid of
//! 64×64 patches, an `info.txt` listing the 3D point id of every patch, and
//! match files whose lines read `patchID1 pointID1 _ patchID2 pointID2 _`.
//! Patches are flattened row-major and scaled into [0,1] by 1/255.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const UBC_PATCH_SIDE: usize = 64;
pub const UBC_GRID: usize = 16;

const DATASET_MAGIC: &[u8; 4] = b"SPMP";
const DATASET_VERSION: u32 = 1;

/// A square grayscale patch flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: Vec<f64>,
    side: usize,
}

impl Patch {
    pub fn new(pixels: Vec<f64>, side: usize) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "patch of side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Patch { pixels, side })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairLabel {
    pub idx_a: usize,
    pub idx_b: usize,
    pub label: u8,
}

impl PairLabel {
    pub fn is_match(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub name: String,
    pub patches: Vec<Patch>,
    pub pairs: Vec<PairLabel>,
    /// Generating prototype per patch; only synthetic datasets carry it.
    pub prototype_of: Option<Vec<usize>>,
}

impl PatchDataset {
    pub fn new(name: impl Into<String>, patches: Vec<Patch>, pairs: Vec<PairLabel>) -> Result<Self> {
        let ds = PatchDataset {
            name: name.into(),
            patches,
            pairs,
            prototype_of: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.patches.len();
        if let Some(first) = self.patches.first() {
            if self.patches.iter().any(|p| p.side != first.side) {
                return Err(Error::Shape("patches of mixed size".into()));
            }
        }
        for p in &self.pairs {
            if p.idx_a >= n || p.idx_b >= n {
                return Err(Error::Range(format!(
                    "pair ({}, {}) references {n} patches",
                    p.idx_a, p.idx_b
                )));
            }
            if p.label > 1 {
                return Err(Error::Format(format!("label {} not in {{0,1}}", p.label)));
            }
        }
        Ok(())
    }

    /// Patch dimension m, or 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.patches.first().map_or(0, Patch::dim)
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.is_match()).count() as f64 / self.pairs.len() as f64
    }

    /// m×n matrix with the selected patches as columns.
    pub fn data_matrix(&self, indices: &[usize], standardize: bool) -> Array2<f64> {
        let m = self.dim();
        let mut x = Array2::zeros((m, indices.len()));
        let mut buf = vec![0.0; m];
        for (col, &i) in indices.iter().enumerate() {
            buf.copy_from_slice(self.patches[i].pixels());
            if standardize {
                standardize_in_place(&mut buf);
            }
            for (dst, &v) in x.column_mut(col).iter_mut().zip(&buf) {
                *dst = v;
            }
        }
        x
    }
}

/// Zero-mean, unit-variance rescaling; constant patches become all zeros.
pub fn standardize_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

/// Splits one grayscale sheet into `grid²` patches in row-major sheet order.
pub fn load_patch_sheet(path: &Path, patch_side: usize, grid: usize) -> Result<Vec<Patch>> {
    if patch_side == 0 || grid == 0 {
        return Err(Error::Config("patch_side and grid must be positive".into()));
    }
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?
        .to_luma8();
    let expected = (grid * patch_side) as u32;
    if img.width() != expected || img.height() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected}x{expected} sheet, got {}x{}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut pixels = Vec::with_capacity(patch_side * patch_side);
            for y in 0..patch_side {
                for x in 0..patch_side {
                    let v = img.get_pixel((gx * patch_side + x) as u32, (gy * patch_side + y) as u32)[0];
                    pixels.push(f64::from(v) / 255.0);
                }
            }
            out.push(Patch { pixels, side: patch_side });
        }
    }
    Ok(out)
}

/// Loads several sheets in parallel; output follows the order of `paths`.
pub fn load_patch_sheets(paths: &[PathBuf], patch_side: usize, grid: usize) -> Result<Vec<Patch>> {
    let sheets: Vec<Vec<Patch>> = paths
        .par_iter()
        .map(|p| load_patch_sheet(p, patch_side, grid))
        .collect::<Result<_>>()?;
    Ok(sheets.into_iter().flatten().collect())
}

/// 3D point id of every patch, one record per line (first column).
pub fn load_info_file(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(tok) = line.split_whitespace().next() else {
            continue;
        };
        ids.push(tok.parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad point id {tok:?}"),
        })?);
    }
    Ok(ids)
}

/// Parses a match file against the per-patch point ids of its subset.
///
/// The label is 1 iff the two point ids on the line are equal. Point ids on
/// the line must agree with `point_ids`.
pub fn load_match_file(path: &Path, point_ids: &[u32]) -> Result<Vec<PairLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text, point_ids)
}

pub fn parse_matches(text: &str, point_ids: &[u32]) -> Result<Vec<PairLabel>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<u64> = line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("not an integer: {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() < 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 6 fields, found {}", fields.len()),
            });
        }
        let (pa, qa, pb, qb) = (fields[0] as usize, fields[1], fields[3] as usize, fields[4]);
        for (patch, point) in [(pa, qa), (pb, qb)] {
            let Some(&known) = point_ids.get(patch) else {
                return Err(Error::Range(format!(
                    "line {lineno}: patch {patch} out of range for {} patches",
                    point_ids.len()
                )));
            };
            if u64::from(known) != point {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("patch {patch} has point id {known}, line says {point}"),
                });
            }
        }
        pairs.push(PairLabel {
            idx_a: pa,
            idx_b: pb,
            label: u8::from(qa == qb),
        });
    }
    Ok(pairs)
}

/// Loads a UBC-style subset directory: `*.bmp` sheets in lexicographic
/// order, `info.txt` and the given match file.
pub fn load_ubc_subset(dir: &Path, match_file: &str) -> Result<PatchDataset> {
    let mut sheets: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("bmp")))
        .collect();
    sheets.sort();
    let mut patches = load_patch_sheets(&sheets, UBC_PATCH_SIDE, UBC_GRID)?;
    let point_ids = load_info_file(&dir.join("info.txt"))?;
    // the last sheet is padded with blank patches
    patches.truncate(point_ids.len());
    let pairs = load_match_file(&dir.join(match_file), &point_ids)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PatchDataset::new(name, patches, pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_prototypes: usize,
    /// Pairs anchored on each prototype; labels alternate globally.
    pub pairs_per_class: usize,
    pub side: usize,
    pub noise_sigma: f64,
    pub shift_max: usize,
    /// Seed of the prototype bank; `None` derives it from `seed`. Two
    /// datasets with the same prototype seed share their prototypes.
    pub prototype_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_prototypes: 40,
            pairs_per_class: 50,
            side: 8,
            noise_sigma: 0.05,
            shift_max: 1,
            prototype_seed: None,
        }
    }
}

/// Smooth random prototype: a few Gaussian blobs plus an oriented grating.
fn prototype(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let s = side as f64;
    let mut img = vec![0.0; side * side];
    let blobs = rng.random_range(2..=4);
    let mut params = Vec::with_capacity(blobs);
    for _ in 0..blobs {
        params.push((
            rng.random_range(0.0..s),
            rng.random_range(0.0..s),
            rng.random_range(0.12..0.35) * s,
            rng.random_range(-1.0..1.0),
        ));
    }
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let freq = rng.random_range(0.5..2.0) * std::f64::consts::TAU / s;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(0.1..0.4);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = amp * (freq * (fx * theta.cos() + fy * theta.sin()) + phase).sin();
            for &(cx, cy, r, a) in &params {
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v += a * (-d2 / (2.0 * r * r)).exp();
            }
            img[y * side + x] = v;
        }
    }
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    img.iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect()
}

fn view(rng: &mut ChaCha8Rng, proto: &[f64], cfg: &SynthConfig, noise: &Normal<f64>) -> Vec<f64> {
    let side = cfg.side as i64;
    let sm = cfg.shift_max as i64;
    let (dx, dy) = if sm > 0 {
        (rng.random_range(0..=2 * sm) - sm, rng.random_range(0..=2 * sm) - sm)
    } else {
        (0, 0)
    };
    let mut out = Vec::with_capacity(proto.len());
    for y in 0..side {
        for x in 0..side {
            let sx = (x + dx).clamp(0, side - 1);
            let sy = (y + dy).clamp(0, side - 1);
            let mut v = proto[(sy * side + sx) as usize];
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(rng);
            }
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Labeled pair dataset of shifted, noised views of random prototypes.
///
/// Every pair gets two fresh patches. Matching pairs view the same
/// prototype; non-matching pairs view two distinct prototypes.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<PatchDataset> {
    if cfg.n_prototypes < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 prototypes to form non-matching pairs, got {}",
            cfg.n_prototypes
        )));
    }
    if cfg.side < 4 {
        return Err(Error::Config(format!("patch side must be >= 4, got {}", cfg.side)));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    if 2 * cfg.shift_max >= cfg.side {
        return Err(Error::Config(format!(
            "shift_max {} must be below side/2 = {}",
            cfg.shift_max,
            cfg.side as f64 / 2.0
        )));
    }
    let total = cfg.n_prototypes * cfg.pairs_per_class;
    if !total.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "n_prototypes * pairs_per_class = {total} must be even for an exact 50% label balance"
        )));
    }

    let proto_seed = cfg.prototype_seed.unwrap_or(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut proto_rng = ChaCha8Rng::seed_from_u64(proto_seed);
    let protos: Vec<Vec<f64>> = (0..cfg.n_prototypes)
        .map(|_| prototype(&mut proto_rng, cfg.side))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut plan = Vec::with_capacity(total);
    for p in 0..cfg.n_prototypes {
        for j in 0..cfg.pairs_per_class {
            let positive = (p * cfg.pairs_per_class + j).is_multiple_of(2);
            let q = if positive {
                p
            } else {
                let r = rng.random_range(0..cfg.n_prototypes - 1);
                if r >= p {
                    r + 1
                } else {
                    r
                }
            };
            plan.push((p, q, positive));
        }
    }
    // Fisher-Yates so labels and prototypes are not ordered
    for i in (1..plan.len()).rev() {
        let j = rng.random_range(0..=i);
        plan.swap(i, j);
    }

    let mut patches = Vec::with_capacity(2 * total);
    let mut prototype_of = Vec::with_capacity(2 * total);
    let mut pairs = Vec::with_capacity(total);
    for (p, q, positive) in plan {
        let a = patches.len();
        for proto in [p, q] {
            patches.push(Patch {
                pixels: view(&mut rng, &protos[proto], cfg, &noise),
                side: cfg.side,
            });
            prototype_of.push(proto);
        }
        pairs.push(PairLabel {
            idx_a: a,
            idx_b: a + 1,
            label: u8::from(positive),
        });
    }
    Ok(PatchDataset {
        name: format!("synth-{}", cfg.seed),
        patches,
        pairs,
        prototype_of: Some(prototype_of),
    })
}

/// Writes the binary patch container plus the `idx_a,idx_b,label` CSV.
pub fn save_dataset(ds: &PatchDataset, bin_path: &Path, csv_path: &Path) -> Result<()> {
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    w.u64(ds.dim() as u64);
    w.u64(ds.patches.len() as u64);
    for p in &ds.patches {
        w.f64s(p.pixels.iter().copied());
    }
    binio::write_file(bin_path, &w.finish())?;
    write_pairs_csv(csv_path, &ds.pairs)
}

pub fn load_dataset(bin_path: &Path, csv_path: &Path) -> Result<PatchDataset> {
    let bytes = binio::read_file(bin_path)?;
    let mut r = Reader::open(&bytes, DATASET_MAGIC, DATASET_VERSION, false, "patch container")?;
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let side = (m as f64).sqrt().round() as usize;
    if side * side != m || (m == 0 && n > 0) {
        return Err(Error::Format(format!("patch dimension {m} is not a square")));
    }
    let mut patches = Vec::with_capacity(n);
    for _ in 0..n {
        patches.push(Patch::new(r.f64s(m)?, side)?);
    }
    r.done()?;
    let pairs = read_pairs_csv(csv_path)?;
    let name = bin_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PatchDataset::new(name, patches, pairs)
}

pub fn write_pairs_csv(path: &Path, pairs: &[PairLabel]) -> Result<()> {
    let mut out = Vec::with_capacity(16 * pairs.len() + 20);
    writeln!(out, "idx_a,idx_b,label").unwrap();
    for p in pairs {
        writeln!(out, "{},{},{}", p.idx_a, p.idx_b, p.label).unwrap();
    }
    binio::write_file(path, &out)
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("idx_a") || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad("expected idx_a,idx_b,label"));
        }
        let label: u8 = f[2].parse().map_err(|_| bad("bad label"))?;
        if label > 1 {
            return Err(bad("label must be 0 or 1"));
        }
        pairs.push(PairLabel {
            idx_a: f[0].parse().map_err(|_| bad("bad idx_a"))?,
            idx_b: f[1].parse().map_err(|_| bad("bad idx_b"))?,
            label,
        });
    }
    Ok(pairs)
}
