//! Reference solvers used as oracles by the spm test suites.
//!
//! Everything here is deliberately naive: brute force, plain iteration and
//! textbook dense algorithms over `ndarray` types, sharing no code with the
//! solvers under test.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------- lasso

/// `‖x - Bc‖² + β‖c‖₁`.
pub fn lasso_objective(b: &Array2<f64>, x: &[f64], c: &[f64], beta: f64) -> f64 {
    let mut rss = 0.0;
    for i in 0..b.nrows() {
        let mut r = x[i];
        for j in 0..b.ncols() {
            r -= b[[i, j]] * c[j];
        }
        rss += r * r;
    }
    rss + beta * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent on `‖x - Bc‖² + β‖c‖₁` until no coordinate
/// moves by more than `tol`.
pub fn lasso_coordinate_descent(b: &Array2<f64>, x: &[f64], beta: f64, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let (m, k) = b.dim();
    let mut c = vec![0.0; k];
    let mut r = x.to_vec();
    let norms: Vec<f64> = (0..k).map(|j| (0..m).map(|i| b[[i, j]] * b[[i, j]]).sum()).collect();
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..k {
            if norms[j] == 0.0 {
                continue;
            }
            let rho: f64 = (0..m).map(|i| b[[i, j]] * (r[i] + b[[i, j]] * c[j])).sum();
            let t = beta / 2.0;
            let new = if rho > t {
                (rho - t) / norms[j]
            } else if rho < -t {
                (rho + t) / norms[j]
            } else {
                0.0
            };
            let d = new - c[j];
            if d != 0.0 {
                for i in 0..m {
                    r[i] -= b[[i, j]] * d;
                }
                c[j] = new;
            }
            max_delta = max_delta.max(d.abs());
        }
        if max_delta < tol {
            break;
        }
    }
    c
}

/// Solves the small dense system `a z = y` by Gaussian elimination with
/// partial pivoting; `None` when singular.
pub fn gauss_solve(a: &Array2<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let mut m = a.clone();
    let mut rhs = y.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[piv, col]].abs() < 1e-12 {
            return None;
        }
        for j in 0..n {
            m.swap([col, j], [piv, j]);
        }
        rhs.swap(col, piv);
        for i in col + 1..n {
            let f = m[[i, col]] / m[[col, col]];
            for j in col..n {
                m[[i, j]] -= f * m[[col, j]];
            }
            rhs[i] -= f * rhs[col];
        }
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[[i, j]] * z[j]).sum();
        z[i] = (rhs[i] - s) / m[[i, i]];
    }
    Some(z)
}

/// Exact lasso minimum by enumerating every support and sign pattern and
/// solving the stationarity equations on it. Exponential; k ≤ 8.
pub fn lasso_brute_force(b: &Array2<f64>, x: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let (m, k) = b.dim();
    assert!(k <= 8, "brute force is exponential in k");
    let mut best = vec![0.0; k];
    let mut best_obj = lasso_objective(b, x, &best, beta);
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let s = support.len();
        if s > m {
            continue;
        }
        let gram = Array2::from_shape_fn((s, s), |(p, q)| (0..m).map(|i| b[[i, support[p]]] * b[[i, support[q]]]).sum());
        let bx: Vec<f64> = support.iter().map(|&j| (0..m).map(|i| b[[i, j]] * x[i]).sum()).collect();
        for signs in 0u32..(1 << s) {
            let rhs: Vec<f64> = (0..s)
                .map(|p| bx[p] - beta / 2.0 * if signs & (1 << p) != 0 { -1.0 } else { 1.0 })
                .collect();
            let Some(z) = gauss_solve(&gram, &rhs) else { continue };
            let consistent = (0..s).all(|p| {
                let want = if signs & (1 << p) != 0 { -1.0 } else { 1.0 };
                z[p] * want > 0.0
            });
            if !consistent {
                continue;
            }
            let mut c = vec![0.0; k];
            for (p, &j) in support.iter().enumerate() {
                c[j] = z[p];
            }
            let obj = lasso_objective(b, x, &c, beta);
            if obj < best_obj {
                best_obj = obj;
                best = c;
            }
        }
    }
    (best, best_obj)
}

// ---------------------------------------------------------------- ridge

/// `‖Y - XᵀB‖²_F + α‖B‖²_F`.
pub fn ridge_objective(x: &Array2<f64>, y: &Array2<f64>, b: &Array2<f64>, alpha: f64) -> f64 {
    let (m, n) = x.dim();
    let k = y.ncols();
    let mut obj = 0.0;
    for r in 0..n {
        for c in 0..k {
            let fit: f64 = (0..m).map(|i| x[[i, r]] * b[[i, c]]).sum();
            obj += (y[[r, c]] - fit).powi(2);
        }
    }
    obj + alpha * b.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient descent with step 1/L on the ridge objective, L estimated by
/// power iteration on XXᵀ.
pub fn ridge_gradient_descent(x: &Array2<f64>, y: &Array2<f64>, alpha: f64, iters: usize) -> Array2<f64> {
    let m = x.nrows();
    let xxt = x.dot(&x.t());
    let mut v = Array1::from_elem(m, 1.0);
    let mut lmax = 0.0;
    for _ in 0..500 {
        let w = xxt.dot(&v);
        lmax = w.dot(&w).sqrt() / v.dot(&v).sqrt();
        v = &w / w.dot(&w).sqrt();
    }
    let step = 1.0 / (2.0 * (lmax * 1.01 + alpha));
    let xy = x.dot(y);
    let mut b = Array2::zeros((m, y.ncols()));
    for _ in 0..iters {
        // grad = 2(XXᵀ + αI)B - 2XY
        let grad = (xxt.dot(&b) + &(&b * alpha) - &xy) * 2.0;
        b = b - grad * step;
    }
    b
}

// ---------------------------------------------------------------- eigen

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Dense generalized symmetric-definite pencil `A y = λ B y` via the
/// Cholesky reduction `L⁻¹ A L⁻ᵀ` and Jacobi. Eigenvalues ascending,
/// eigenvectors B-normalized as columns.
pub fn pencil_eigen(a: &Array2<f64>, b: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                l[[i, i]] = (b[[i, i]] - s).sqrt();
            } else {
                l[[i, j]] = (b[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    let mut linv = Array2::<f64>::zeros((n, n));
    for c in 0..n {
        for i in 0..n {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (0..i).map(|k| l[[i, k]] * linv[[k, c]]).sum();
            linv[[i, c]] = (rhs - s) / l[[i, i]];
        }
    }
    let c = linv.dot(a).dot(&linv.t());
    let c = (&c + &c.t()) / 2.0;
    let (vals, z) = jacobi_eigen(&c);
    let y = linv.t().dot(&z);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&p, &q| vals[p].total_cmp(&vals[q]));
    let sorted_vals = idx.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = Array2::from_shape_fn((n, n), |(r, c)| y[[r, idx[c]]]);
    (sorted_vals, sorted_vecs)
}

// ---------------------------------------------------------------- graph

/// Dense heat-kernel p-NN weights by brute force: every point sorts all
/// others by (distance, index) and keeps the first p; edges follow the
/// OR rule. Points are the columns of `x`.
pub fn knn_weights_brute(x: &Array2<f64>, p: usize, t: f64, squared: bool) -> Array2<f64> {
    let n = x.ncols();
    let dist = |i: usize, j: usize| -> f64 {
        let d2: f64 = (0..x.nrows()).map(|r| (x[[r, i]] - x[[r, j]]).powi(2)).sum();
        if squared {
            d2
        } else {
            d2.sqrt()
        }
    };
    let mut member = vec![vec![false; n]; n];
    for (i, row) in member.iter_mut().enumerate() {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(p) {
            row[j] = true;
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && (member[i][j] || member[j][i]) {
            (-dist(i, j) / t).exp()
        } else {
            0.0
        }
    })
}

// ---------------------------------------------------------------- ROC

/// `(threshold, tpr, fpr)` for +inf and every distinct score, each counted
/// by a full pass over the data.
pub fn roc_brute(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    thresholds
        .into_iter()
        .map(|t| {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 0).count() as f64;
            (t, tp / pos, fp / neg)
        })
        .collect()
}

/// Smallest FPR among thresholds reaching TPR ≥ `target`, interpolated
/// towards the preceding threshold when the crossing is not exact.
pub fn fpr_at_recall_brute(scores: &[f64], labels: &[u8], target: f64) -> f64 {
    let pts = roc_brute(scores, labels);
    let i = pts.iter().position(|p| p.1 >= target).unwrap();
    let (_, t1, f1) = pts[i];
    if t1 == target || i == 0 {
        return f1;
    }
    let (_, t0, f0) = pts[i - 1];
    f0 + (f1 - f0) * (target - t0) / (t1 - t0)
}

// ---------------------------------------------------------------- gradients

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pencil_of_triangle() {
        let l = array![[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]];
        let d = Array2::from_diag(&array![2.0, 2.0, 2.0]);
        let (vals, _) = pencil_eigen(&l, &d);
        assert!(vals[0].abs() < 1e-12);
        assert!((vals[1] - 1.5).abs() < 1e-12 && (vals[2] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cd_matches_brute_force() {
        let mut r = rng(1);
        let b = random_matrix(&mut r, 4, 5);
        let x = random_vec(&mut r, 4);
        let cd = lasso_coordinate_descent(&b, &x, 0.3, 1e-13, 100_000);
        let (_, obj) = lasso_brute_force(&b, &x, 0.3);
        assert!((lasso_objective(&b, &x, &cd, 0.3) - obj).abs() < 1e-9);
    }
}
