//! Convex-combination certificates for the worst-case estimator.
//!
//! At the min-max point `x`, zero must lie in the convex hull of the
//! half-gradients `g_k = P_k (x - xhat_k)` of the active members. The
//! weights are found as the minimum-norm point of that hull (a
//! simplex-constrained nonnegative least-squares problem) and reduced to an
//! affinely independent support of at most `n + 1` members.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::linalg;
use crate::risk::EnergySnapshot;

/// Relative width of the active band below the maximal energy.
pub const ACTIVE_REL_TOL: f64 = 1e-6;
/// Certificate residual accepted as optimal.
pub const CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseCertificate {
    /// Members within the active band, ascending.
    pub active_set: Vec<usize>,
    /// Convex weights aligned with `active_set`.
    pub alpha: Vec<f64>,
    /// `| sum_k alpha_k P_k (x - xhat_k) |`.
    pub residual: f64,
}

impl WorstCaseCertificate {
    /// Members carrying nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        self.active_set
            .iter()
            .zip(&self.alpha)
            .filter(|(_, a)| **a > 0.0)
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn is_certified(&self) -> bool {
        self.residual <= CERTIFICATE_TOL
    }
}

/// Minimum-norm point of the convex hull of `points` (Wolfe's algorithm).
///
/// Returns convex weights aligned with `points`. The support of the weights
/// is affinely independent, hence has at most `dim + 1` elements.
pub fn min_norm_point(points: &[DVector<f64>]) -> Vec<f64> {
    let m = points.len();
    assert!(m > 0, "min_norm_point needs at least one point");
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;

    let start = (0..m)
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap();
    let mut corral: Vec<usize> = vec![start];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut x = points[start].clone();

    for _major in 0..(10 * m + 50) {
        let (j, best) = (0..m)
            .map(|i| (i, x.dot(&points[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if x.norm_squared() - best <= tol || corral.contains(&j) {
            break;
        }
        corral.push(j);
        lambda.push(0.0);

        for _minor in 0..(m + 5) {
            let mu = match affine_minimizer(points, &corral) {
                Some(mu) => mu,
                None => {
                    // Numerically dependent corral: drop the newest point.
                    corral.pop();
                    lambda.pop();
                    break;
                }
            };
            if mu.iter().all(|&v| v > 1e-15) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0_f64;
            for (l, u) in lambda.iter().zip(&mu) {
                if *u <= 1e-15 && l - u > 0.0 {
                    theta = theta.min(l / (l - u));
                }
            }
            for (l, u) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * u;
            }
            let mut k = 0;
            while k < corral.len() {
                if lambda[k] <= 1e-15 {
                    corral.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            if corral.len() == 1 {
                lambda[0] = 1.0;
                break;
            }
        }
        let total: f64 = lambda.iter().sum();
        for l in &mut lambda {
            *l /= total;
        }
        x = combine(points, &corral, &lambda);
    }

    let mut weights = vec![0.0; m];
    for (k, l) in corral.iter().zip(&lambda) {
        weights[*k] = *l;
    }
    weights
}

fn combine(points: &[DVector<f64>], idx: &[usize], w: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(points[0].len());
    for (k, wk) in idx.iter().zip(w) {
        x += &points[*k] * *wk;
    }
    x
}

/// Weights `mu` (summing to one) of the point of smallest norm in the affine hull.
fn affine_minimizer(points: &[DVector<f64>], idx: &[usize]) -> Option<Vec<f64>> {
    let s = idx.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            kkt[(a, b)] = points[i].dot(&points[j]);
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(sol.rows(0, s).iter().copied().collect())
}

/// Reduces convex weights on `points` to an affinely independent support
/// without changing `sum_k w_k p_k`.
pub fn caratheodory_reduce(points: &[DVector<f64>], weights: &[f64]) -> Vec<f64> {
    let mut w = weights.to_vec();
    let dim = points[0].len();
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
        let null = if support.len() > dim + 1 {
            affine_dependence(points, &support[..dim + 2])
        } else {
            affine_dependence(points, &support)
        };
        let Some(mu) = null else {
            return w;
        };
        let sub = if support.len() > dim + 1 { &support[..dim + 2] } else { &support[..] };
        // Move along the dependence until the first weight hits zero.
        let mut tau = f64::INFINITY;
        let mut hit = 0;
        for (a, &k) in sub.iter().enumerate() {
            if mu[a] > 0.0 && w[k] / mu[a] < tau {
                tau = w[k] / mu[a];
                hit = k;
            }
        }
        if !tau.is_finite() {
            return w;
        }
        for (a, &k) in sub.iter().enumerate() {
            w[k] -= tau * mu[a];
            if w[k] < 0.0 {
                w[k] = 0.0;
            }
        }
        w[hit] = 0.0;
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
    }
}

/// Nonzero `mu` with `sum mu_a p_a = 0` and `sum mu_a = 0`, if the points are affinely dependent.
fn affine_dependence(points: &[DVector<f64>], idx: &[usize]) -> Option<Vec<f64>> {
    let dim = points[0].len();
    let s = idx.len();
    if s < 2 {
        return None;
    }
    let mut m = DMatrix::zeros(dim + 1, s);
    for (a, &k) in idx.iter().enumerate() {
        m.view_mut((0, a), (dim, 1)).copy_from(&points[k]);
        m[(dim, a)] = 1.0;
    }
    let scale = m.amax().max(1.0);
    null_vector(m, 1e-10 * scale)
}

/// A unit null vector of `m` via row reduction with partial pivoting, if one exists.
fn null_vector(mut m: DMatrix<f64>, tol: f64) -> Option<Vec<f64>> {
    let (rows, cols) = m.shape();
    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (best, val) = (row..rows)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if val <= tol {
            continue;
        }
        m.swap_rows(row, best);
        let p = m[(row, col)];
        for c in 0..cols {
            m[(row, c)] /= p;
        }
        for r in 0..rows {
            if r != row {
                let f = m[(r, col)];
                if f != 0.0 {
                    for c in 0..cols {
                        m[(r, c)] -= f * m[(row, c)];
                    }
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut v = vec![0.0; cols];
    v[free] = 1.0;
    for (r, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -m[(r, free)];
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Some(v.into_iter().map(|x| x / n).collect())
}

/// Builds the optimality certificate of a candidate min-max point `x`.
pub fn certify(snapshot: &EnergySnapshot, x: &DVector<f64>) -> WorstCaseCertificate {
    let energies = snapshot.energies(x);
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = ACTIVE_REL_TOL * (1.0 + max.abs());
    let active_set: Vec<usize> = (0..energies.len()).filter(|&k| energies[k] >= max - band).collect();
    let grads = snapshot.half_gradients(x);
    let points: Vec<DVector<f64>> = active_set.iter().map(|&k| grads[k].clone()).collect();
    let mut alpha = min_norm_point(&points);
    if alpha.iter().filter(|&&a| a > 0.0).count() > x.len() + 1 {
        alpha = caratheodory_reduce(&points, &alpha);
    }
    let residual = linalg::norm(&combine(&points, &(0..points.len()).collect::<Vec<_>>(), &alpha));
    WorstCaseCertificate {
        active_set,
        alpha,
        residual,
    }
}
