//! p-nearest-neighbor affinity graph with heat-kernel weights, and the
//! unnormalized Laplacian L = D - W.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Mean of the retained neighbor distances.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub p: usize,
    pub bandwidth: Bandwidth,
    /// Use ‖xi - xj‖² in the exponent instead of ‖xi - xj‖.
    pub squared_distance: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            p: DEFAULT_NEIGHBORS,
            bandwidth: Bandwidth::Auto,
            squared_distance: false,
        }
    }
}

/// Symmetric sparse weight matrix stored as sorted adjacency rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    rows: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
    pub p: usize,
    pub t: f64,
    pub squared_distance: bool,
}

impl AffinityGraph {
    /// Builds a graph from an explicit undirected edge list. Duplicate edges
    /// keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Range(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Graph(format!("edge ({i}, {j}) has weight {w}")));
            }
            upsert(&mut rows[i], j, w);
            upsert(&mut rows[j], i, w);
        }
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        Ok(Self::from_rows(rows, 0, f64::NAN, false))
    }

    fn from_rows(rows: Vec<Vec<(usize, f64)>>, p: usize, t: f64, squared_distance: bool) -> Self {
        let degrees = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
        AffinityGraph {
            rows,
            degrees,
            p,
            t,
            squared_distance,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Neighbors of `i` sorted by index.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges with i < j.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().filter(move |e| e.0 > i).map(move |&(j, w)| (i, j, w)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut w = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                w[[i, j]] = v;
            }
        }
        w
    }

    /// Debug dump of `i,j,w` triples (i < j).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "i,j,w").unwrap();
        for (i, j, w) in self.edges() {
            writeln!(out, "{i},{j},{w:e}").unwrap();
        }
        binio::write_file(path, &out)
    }
}

fn upsert(row: &mut Vec<(usize, f64)>, j: usize, w: f64) {
    match row.iter_mut().find(|e| e.0 == j) {
        Some(e) => e.1 = w,
        None => row.push((j, w)),
    }
}

fn distance(a: &[f64], b: &[f64], squared: bool) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if squared {
        d2
    } else {
        d2.sqrt()
    }
}

/// Indices of the `p` nearest points to `i` (Euclidean), ties broken by
/// lower index.
fn nearest(points: &ArrayView2<f64>, i: usize, p: usize) -> Vec<(usize, f64)> {
    let q = points.row(i);
    let q = q.as_slice().unwrap();
    let mut cand: Vec<(f64, usize)> = (0..points.nrows())
        .filter(|&j| j != i)
        .map(|j| (distance(q, points.row(j).as_slice().unwrap(), true), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if p < cand.len() {
        cand.select_nth_unstable_by(p - 1, cmp);
        cand.truncate(p);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| (j, 0.0)).collect()
}

/// Heat-kernel p-NN graph over the columns of `x` (m×n).
///
/// `W_ij = exp(-‖xi - xj‖ / t)` when either point is among the other's p
/// nearest neighbors, else 0.
pub fn knn_graph(x: &Array2<f64>, cfg: &GraphConfig) -> Result<AffinityGraph> {
    let n = x.ncols();
    let p = cfg.p;
    if p == 0 {
        return Err(Error::Config("neighbor count p must be >= 1".into()));
    }
    if n <= p {
        return Err(Error::Config(format!(
            "p-NN graph needs n >= p + 1 points, got n = {n}, p = {p}"
        )));
    }
    if let Bandwidth::Fixed(t) = cfg.bandwidth {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("heat-kernel bandwidth t must be > 0, got {t}")));
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("data matrix has non-finite entries".into()));
    }
    let points = x.t().as_standard_layout().into_owned();
    let view = points.view();

    let knn: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| nearest(&view, i, p)).collect();

    // OR-rule symmetrization with distances in the exponent's units
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, nbrs) in knn.iter().enumerate() {
        for &(j, _) in nbrs {
            let d = distance(view.row(i).as_slice().unwrap(), view.row(j).as_slice().unwrap(), cfg.squared_distance);
            rows[i].push((j, d));
            rows[j].push((i, d));
        }
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
        r.dedup_by_key(|e| e.0);
    }

    let t = match cfg.bandwidth {
        Bandwidth::Fixed(t) => t,
        Bandwidth::Auto => {
            let (sum, cnt) = rows
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().filter(move |e| e.0 > i))
                .fold((0.0, 0usize), |(s, c), e| (s + e.1, c + 1));
            let mean = sum / cnt as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    for r in &mut rows {
        for e in r.iter_mut() {
            e.1 = (-e.1 / t).exp().max(f64::MIN_POSITIVE);
        }
    }
    Ok(AffinityGraph::from_rows(rows, p, t, cfg.squared_distance))
}

/// L = D - W in sparse row form, together with the degree diagonal D.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPair {
    /// Row i holds (j, L_ij) sorted by j, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
    d: Vec<f64>,
}

impl LaplacianPair {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.d
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = r.iter().map(|&(j, l)| l * v[j]).sum();
        }
    }

    pub fn l_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut l = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                l[[i, j]] = v;
            }
        }
        l
    }

    pub fn d_dense(&self) -> Array2<f64> {
        Array2::from_diag(&ndarray::Array1::from(self.d.clone()))
    }
}

pub fn laplacian(g: &AffinityGraph) -> LaplacianPair {
    let rows = g
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out: Vec<(usize, f64)> = r.iter().map(|&(j, w)| (j, -w)).collect();
            let pos = out.partition_point(|e| e.0 < i);
            out.insert(pos, (i, g.degrees[i]));
            out
        })
        .collect();
    LaplacianPair {
        rows,
        d: g.degrees.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fixed(p: usize, t: f64) -> GraphConfig {
        GraphConfig {
            p,
            bandwidth: Bandwidth::Fixed(t),
            squared_distance: false,
        }
    }

    #[test]
    fn collinear_points() {
        let x = array![[0.0, 1.0, 10.0]];
        let g = knn_graph(&x, &fixed(1, 1.0)).unwrap();
        assert_eq!(g.weight(0, 1), (-1.0f64).exp());
        assert_eq!(g.weight(1, 2), (-9.0f64).exp());
        assert_eq!(g.weight(0, 2), 0.0);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn duplicate_points_get_unit_weight() {
        let x = array![[0.5, 0.5, 3.0, 7.0]];
        let g = knn_graph(&x, &fixed(1, 2.0)).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(1, 0), 1.0);
    }

    #[test]
    fn too_few_points() {
        let x = array![[0.0, 1.0]];
        assert!(matches!(knn_graph(&x, &fixed(2, 1.0)), Err(Error::Config(_))));
        assert!(matches!(knn_graph(&x, &fixed(1, 0.0)), Err(Error::Config(_))));
    }

    #[test]
    fn auto_bandwidth_is_mean_edge_distance() {
        let x = array![[0.0, 1.0, 10.0]];
        let cfg = GraphConfig {
            p: 1,
            bandwidth: Bandwidth::Auto,
            squared_distance: false,
        };
        let g = knn_graph(&x, &cfg).unwrap();
        assert_eq!(g.t, 5.0);
        assert_eq!(g.weight(0, 1), (-1.0f64 / 5.0).exp());
    }

    #[test]
    fn squared_distance_flag() {
        let x = array![[0.0, 2.0, 10.0]];
        let cfg = GraphConfig {
            p: 1,
            bandwidth: Bandwidth::Fixed(1.0),
            squared_distance: true,
        };
        let g = knn_graph(&x, &cfg).unwrap();
        assert_eq!(g.weight(0, 1), (-4.0f64).exp());
    }

    #[test]
    fn two_node_laplacian() {
        let g = AffinityGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let lp = laplacian(&g);
        assert_eq!(lp.l_dense(), array![[1.0, -1.0], [-1.0, 1.0]]);
        assert_eq!(lp.d_dense(), array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn empty_graph_laplacian_is_zero() {
        let g = AffinityGraph::from_edges(3, &[]).unwrap();
        let lp = laplacian(&g);
        assert!(lp.l_dense().iter().all(|&v| v == 0.0));
        assert!(lp.degrees().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_validation() {
        assert!(AffinityGraph::from_edges(2, &[(0, 0, 1.0)]).is_err());
        assert!(AffinityGraph::from_edges(2, &[(0, 2, 1.0)]).is_err());
        assert!(AffinityGraph::from_edges(2, &[(0, 1, 0.0)]).is_err());
    }
}
