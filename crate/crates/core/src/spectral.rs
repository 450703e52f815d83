//! Flat embedding from the generalized eigenproblem `L y = λ D y`.
//!
//! With D diagonal and positive the pencil is reduced to the symmetric
//! matrix `M = D^{-1/2} L D^{-1/2}`; an eigenvector z of M maps back to
//! `y = D^{-1/2} z`, which is D-normalized whenever z has unit length.
//! Graphs up to [`EigenSolverConfig::dense_limit`] nodes are solved densely;
//! larger ones go through a restarted Krylov (Lanczos with full
//! reorthogonalization and Rayleigh-Ritz extraction) solver on the sparse
//! operator.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{laplacian, AffinityGraph, LaplacianPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EigenMode {
    Smallest,
    Largest,
}

impl EigenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EigenMode::Smallest => "smallest",
            EigenMode::Largest => "largest",
        }
    }
}

impl std::str::FromStr for EigenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smallest" => Ok(EigenMode::Smallest),
            "largest" => Ok(EigenMode::Largest),
            other => Err(Error::Config(format!("unknown eigen mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSolverConfig {
    /// Largest n solved with the dense symmetric eigensolver.
    pub dense_limit: usize,
    /// Relative pencil residual every returned pair must meet.
    pub residual_tol: f64,
    /// Krylov basis size cap for the iterative path.
    pub max_basis: usize,
    pub max_restarts: usize,
}

impl Default for EigenSolverConfig {
    fn default() -> Self {
        EigenSolverConfig {
            dense_limit: 5000,
            residual_tol: 1e-8,
            max_basis: 0,
            max_restarts: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// n×k, one row per data point.
    pub y: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub mode: EigenMode,
}

impl Embedding {
    pub fn k(&self) -> usize {
        self.y.ncols()
    }
}

pub fn solve_generalized_eigen(lp: &LaplacianPair, k: usize, mode: EigenMode) -> Result<Embedding> {
    solve_generalized_eigen_with(lp, k, mode, &EigenSolverConfig::default())
}

pub fn solve_generalized_eigen_with(
    lp: &LaplacianPair,
    k: usize,
    mode: EigenMode,
    cfg: &EigenSolverConfig,
) -> Result<Embedding> {
    let n = lp.n();
    if k == 0 || k > n {
        return Err(Error::Config(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if let Some(i) = lp.degrees().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Graph(format!(
            "node {i} is isolated (zero degree); increase the neighbor count p"
        )));
    }
    let inv_sqrt: Vec<f64> = lp.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();

    let (values, vectors) = if n <= cfg.dense_limit {
        dense_eigen(lp, &inv_sqrt, k, mode)
    } else {
        let op = |v: &[f64], out: &mut [f64]| {
            let scaled: Vec<f64> = v.iter().zip(&inv_sqrt).map(|(a, s)| a * s).collect();
            lp.matvec(&scaled, out);
            for (o, s) in out.iter_mut().zip(&inv_sqrt) {
                *o *= s;
            }
        };
        let basis = if cfg.max_basis > 0 {
            cfg.max_basis
        } else {
            (3 * k + 40).max(80)
        };
        krylov_eigen(op, n, k, mode, 1e-3 * cfg.residual_tol, basis.min(n), cfg.max_restarts)?
    };

    let mut y = Array2::zeros((n, k));
    for (c, z) in vectors.iter().enumerate() {
        let mut col: Vec<f64> = z.iter().zip(&inv_sqrt).map(|(a, s)| a * s).collect();
        fix_sign(&mut col);
        for (i, v) in col.into_iter().enumerate() {
            y[[i, c]] = v;
        }
    }
    let emb = Embedding {
        y,
        eigenvalues: values,
        mode,
    };
    let worst = max_relative_residual(lp, &emb);
    if !(worst <= cfg.residual_tol) {
        return Err(Error::Numeric(format!(
            "generalized eigensolver did not converge: relative residual {worst:.3e} > {:.1e}",
            cfg.residual_tol
        )));
    }
    Ok(emb)
}

/// `max_c ‖L y_c - λ_c D y_c‖_∞ / ‖y_c‖_∞` over the embedding's columns.
pub fn max_relative_residual(lp: &LaplacianPair, emb: &Embedding) -> f64 {
    let n = lp.n();
    let mut ly = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for (c, &lambda) in emb.eigenvalues.iter().enumerate() {
        let col: Vec<f64> = emb.y.column(c).to_vec();
        lp.matvec(&col, &mut ly);
        let res = ly
            .iter()
            .zip(&col)
            .zip(lp.degrees())
            .map(|((l, y), d)| (l - lambda * d * y).abs())
            .fold(0.0, f64::max);
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(if scale > 0.0 { res / scale } else { f64::INFINITY });
    }
    worst
}

/// First component above round-off made positive.
fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn order(values: &[f64], mode: EigenMode) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    match mode {
        EigenMode::Smallest => idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))),
        EigenMode::Largest => idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))),
    }
    idx
}

fn dense_eigen(lp: &LaplacianPair, inv_sqrt: &[f64], k: usize, mode: EigenMode) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = lp.n();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for &(j, l) in lp.row(i) {
            m[(i, j)] = l * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let idx = order(&values, mode);
    let sel = &idx[..k];
    (
        sel.iter().map(|&i| values[i]).collect(),
        sel.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect(),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `v` against `basis` twice; returns the remaining norm.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    norm(v)
}

/// Restarted Krylov eigensolver for a symmetric operator of size n.
///
/// Each cycle grows an orthonormal basis V by Lanczos steps, extracts Ritz
/// pairs from `Vᵀ M V`, and restarts from the leading Ritz vectors until the
/// k wanted pairs have residual norm ≤ `tol`.
fn krylov_eigen(
    op: impl Fn(&[f64], &mut [f64]),
    n: usize,
    k: usize,
    mode: EigenMode,
    tol: f64,
    max_basis: usize,
    max_restarts: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let max_basis = max_basis.max(k + 2).min(n);
    let keep = (k + (max_basis - k) / 3).max(k).min(max_basis - 1);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(max_basis);
    let mut pending: Option<Vec<f64>> = Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut worst = f64::INFINITY;

    for _ in 0..=max_restarts {
        while basis.len() < max_basis {
            let mut v = pending.take().unwrap_or_else(|| images.last().unwrap().clone());
            let before = norm(&v);
            let mut after = orthogonalize(&mut v, &basis);
            if !(after > 1e-10 * before.max(1e-300)) {
                // invariant subspace found; continue with a fresh direction
                v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                after = orthogonalize(&mut v, &basis);
            }
            v.iter_mut().for_each(|x| *x /= after);
            let mut w = vec![0.0; n];
            op(&v, &mut w);
            basis.push(v);
            images.push(w);
        }

        let j = basis.len();
        let mut h = DMatrix::<f64>::zeros(j, j);
        for a in 0..j {
            for b in a..j {
                let v = 0.5 * (dot(&basis[a], &images[b]) + dot(&basis[b], &images[a]));
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let idx = order(&values, mode);

        let combine = |set: &[Vec<f64>], s: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (a, vec) in set.iter().enumerate() {
                let c = eig.eigenvectors[(a, idx[s])];
                out.iter_mut().zip(vec).for_each(|(o, x)| *o += c * x);
            }
            out
        };
        let ritz: Vec<(Vec<f64>, Vec<f64>)> = (0..keep.max(k))
            .map(|s| (combine(&basis, s), combine(&images, s)))
            .collect();
        let mut first_unconverged = None;
        worst = 0.0;
        for (s, (u, mu)) in ritz.iter().take(k).enumerate() {
            let theta = values[idx[s]];
            let r: Vec<f64> = mu.iter().zip(u).map(|(a, b)| a - theta * b).collect();
            let rn = norm(&r);
            worst = worst.max(rn);
            if rn > tol && first_unconverged.is_none() {
                first_unconverged = Some(r);
            }
        }
        match first_unconverged {
            None => {
                let vals = (0..k).map(|s| values[idx[s]]).collect();
                let vecs = ritz.into_iter().take(k).map(|(u, _)| u).collect();
                return Ok((vals, vecs));
            }
            Some(r) => {
                if j == n {
                    // full space: Ritz pairs are exact up to round-off
                    let vals = (0..k).map(|s| values[idx[s]]).collect();
                    let vecs = ritz.into_iter().take(k).map(|(u, _)| u).collect();
                    return Ok((vals, vecs));
                }
                let (b, w): (Vec<_>, Vec<_>) = ritz.into_iter().take(keep).unzip();
                basis = b;
                images = w;
                pending = Some(r);
            }
        }
    }
    Err(Error::Numeric(format!(
        "Krylov eigensolver exhausted {max_restarts} restarts; residual {worst:.3e} > {tol:.1e}"
    )))
}

/// Embeds the graph's nodes into k dimensions. With `drop_trivial`, k + 1
/// pairs are solved and the constant (zero-eigenvalue) one is discarded.
pub fn embed(g: &AffinityGraph, k: usize, mode: EigenMode, drop_trivial: bool) -> Result<Embedding> {
    embed_with(g, k, mode, drop_trivial, &EigenSolverConfig::default())
}

pub fn embed_with(
    g: &AffinityGraph,
    k: usize,
    mode: EigenMode,
    drop_trivial: bool,
    cfg: &EigenSolverConfig,
) -> Result<Embedding> {
    let n = g.n();
    let want = if drop_trivial { k + 1 } else { k };
    if k == 0 || want > n {
        return Err(Error::Config(format!(
            "embedding dimension k = {k} too large for n = {n} points{}",
            if drop_trivial { " after dropping the trivial eigenvector" } else { "" }
        )));
    }
    let lp = laplacian(g);
    let full = solve_generalized_eigen_with(&lp, want, mode, cfg)?;
    if !drop_trivial {
        return Ok(full);
    }
    let scale = full.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let smallest = (0..want)
        .min_by(|&a, &b| full.eigenvalues[a].total_cmp(&full.eigenvalues[b]).then(a.cmp(&b)))
        .unwrap();
    let drop = if full.eigenvalues[smallest].abs() <= 1e-9 * scale {
        smallest
    } else {
        want - 1
    };
    let keep: Vec<usize> = (0..want).filter(|&c| c != drop).collect();
    Ok(Embedding {
        y: full.y.select(ndarray::Axis(1), &keep),
        eigenvalues: keep.iter().map(|&c| full.eigenvalues[c]).collect(),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_closed_form() {
        let g = AffinityGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let e = solve_generalized_eigen(&laplacian(&g), 2, EigenMode::Smallest).unwrap();
        assert!(e.eigenvalues[0].abs() < 1e-12);
        assert!((e.eigenvalues[1] - 2.0).abs() < 1e-12);
        let h = 0.5f64.sqrt();
        assert!((e.y[[0, 0]] - h).abs() < 1e-12 && (e.y[[1, 0]] - h).abs() < 1e-12);
        assert!((e.y[[0, 1]] - h).abs() < 1e-12 && (e.y[[1, 1]] + h).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_rejected() {
        let g = AffinityGraph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        let err = solve_generalized_eigen(&laplacian(&g), 1, EigenMode::Smallest).unwrap_err();
        assert!(matches!(err, Error::Graph(_)));
        assert!(err.to_string().contains("increase the neighbor count"));
    }

    #[test]
    fn k_out_of_range() {
        let g = AffinityGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!(matches!(embed(&g, 3, EigenMode::Smallest, true), Err(Error::Config(_))));
        assert!(embed(&g, 2, EigenMode::Smallest, true).is_ok());
        assert!(embed(&g, 3, EigenMode::Smallest, false).is_ok());
    }

    #[test]
    fn largest_mode_orders_descending() {
        let g = AffinityGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let e = solve_generalized_eigen(&laplacian(&g), 3, EigenMode::Largest).unwrap();
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("SMALLEST".parse::<EigenMode>().unwrap(), EigenMode::Smallest);
        assert_eq!("largest".parse::<EigenMode>().unwrap(), EigenMode::Largest);
        assert!("middle".parse::<EigenMode>().is_err());
    }
}
