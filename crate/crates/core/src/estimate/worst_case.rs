//! Min-max point of the member energies at one time.
//!
//! The entropic minimizer is followed along an increasing risk-aversion
//! schedule. Its limit point fixes an active set, on which the optimality
//! system
//!
//! ```text
//! sum_k alpha_k P_k (x - xhat_k) = 0,   V_k(x) = s (k active),   sum_k alpha_k = 1
//! ```
//!
//! is solved by Newton's method. Members with negative weight leave the set,
//! members whose energy exceeds the common level join it.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use super::certificate::{self, ACTIVE_REL_TOL};
use super::descent::{self, DescentConfig};
use super::{weighted_center, PointDiagnostics};
use crate::error::Result;
use crate::linalg;
use crate::risk::EnergySnapshot;

/// Risk aversions of the continuation, in order.
pub const CONTINUATION_SCHEDULE: [f64; 7] = [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6];
/// Iteration cap per continuation stage; the Newton polish finishes the job.
const STAGE_ITERS: usize = 200;
const NEWTON_ITERS: usize = 40;
const ACTIVE_SET_ROUNDS: usize = 50;
/// Relative energy band from which the polish picks its first active set.
const WIDE_BAND: f64 = 1e-3;

/// Worst-case estimate at one time, starting from `x_init`.
///
/// `skip_below` drops the schedule stages with risk aversion at or below it,
/// which is useful when `x_init` already solves an entropic problem.
pub fn worst_case_point(
    snapshot: &EnergySnapshot,
    x_init: &DVector<f64>,
    cfg: &DescentConfig,
    skip_below: f64,
) -> Result<(DVector<f64>, PointDiagnostics)> {
    cfg.validate()?;
    let stage_cfg = DescentConfig {
        max_iters: cfg.max_iters.min(STAGE_ITERS),
        ..*cfg
    };
    let mut x = x_init.clone();
    let mut iterations = 0;
    for &theta in CONTINUATION_SCHEDULE.iter().filter(|t| **t > skip_below) {
        match descent::minimize_entropic(snapshot, theta, &x, &stage_cfg) {
            Ok(out) => {
                iterations += out.iterations;
                x = out.x;
            }
            // Keep the last good stage; the polish below does not depend on it being exact.
            Err(_) => break,
        }
    }

    let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(3);
    let (support, alpha) = initial_set(snapshot, &x);
    if let Some((xp, steps)) = polish_minimax(snapshot, &x, &support, &alpha) {
        iterations += steps;
        candidates.push(xp);
    }
    let mut w = alloc::vec![0.0; snapshot.len()];
    for (k, a) in support.iter().zip(&alpha) {
        w[*k] = *a;
    }
    if let Ok(xw) = weighted_center(snapshot, &w) {
        candidates.push(xw);
    }
    candidates.push(x);

    // Prefer certified candidates, then the lowest maximal energy.
    let mut best: Option<(DVector<f64>, certificate::WorstCaseCertificate, f64)> = None;
    for c in candidates {
        if !linalg::all_finite(c.as_slice()) {
            continue;
        }
        let cert = certificate::certify(snapshot, &c);
        let peak = max_energy(snapshot, &c);
        let better = match &best {
            None => true,
            Some((_, bc, bp)) => match (cert.is_certified(), bc.is_certified()) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => peak < *bp,
                (false, false) => cert.residual < bc.residual,
            },
        };
        if better {
            best = Some((c, cert, peak));
        }
    }
    let (x, cert, _) = best.expect("continuation point is always a candidate");
    let support = cert.support();
    let alpha: Vec<f64> = cert.alpha.iter().copied().filter(|a| *a > 0.0).collect();
    Ok((
        x,
        PointDiagnostics {
            iterations,
            grad_norm: cert.residual,
            converged: cert.is_certified(),
            weights: alpha,
            active_set: support,
            residual: cert.residual,
        },
    ))
}

fn max_energy(snapshot: &EnergySnapshot, x: &DVector<f64>) -> f64 {
    snapshot.energies(x).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Starting active set for the polish: the minimum-norm certificate over all
/// members whose energy lies within a wide band below the maximum.
fn initial_set(snapshot: &EnergySnapshot, x: &DVector<f64>) -> (Vec<usize>, Vec<f64>) {
    let energies = snapshot.energies(x);
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = WIDE_BAND * (1.0 + max.abs());
    let cand: Vec<usize> = (0..energies.len()).filter(|&k| energies[k] >= max - band).collect();
    let grads = snapshot.half_gradients(x);
    let points: Vec<DVector<f64>> = cand.iter().map(|&k| grads[k].clone()).collect();
    let w = certificate::min_norm_point(&points);
    cand.iter()
        .zip(&w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(k, w)| (*k, *w))
        .unzip()
}

/// Active-set Newton solve of the min-max optimality system.
///
/// Starts from `x` with members `active` weighted by `alpha`. Newton steps
/// are cut short where a weight would turn negative, and that member leaves
/// the set. Once the system is solved, the most violating member joins; when
/// the set already has `n + 1` members it replaces the member whose removal
/// gives the highest common energy. Returns the polished point and the
/// number of Newton steps, or `None` when the active set does not settle.
pub fn polish_minimax(
    snapshot: &EnergySnapshot,
    x: &DVector<f64>,
    active: &[usize],
    alpha: &[f64],
) -> Option<(DVector<f64>, usize)> {
    let n = x.len();
    if active.is_empty() || active.len() != alpha.len() {
        return None;
    }
    let mut state = SetSolution {
        set: active.to_vec(),
        a: alpha.to_vec(),
        x: x.clone(),
        s: 0.0,
    };
    normalize(&mut state.a);
    let mut steps = 0;
    for _ in 0..ACTIVE_SET_ROUNDS {
        state = solve_on_set(snapshot, state, &mut steps)?;
        let band = ACTIVE_REL_TOL * (1.0 + state.s.abs());
        let violator = (0..snapshot.len())
            .filter(|k| !state.set.contains(k))
            .map(|k| (k, snapshot.energy(k, &state.x)))
            .filter(|(_, e)| *e > state.s + band)
            .max_by(|p, q| p.1.total_cmp(&q.1));
        let Some((k, _)) = violator else {
            return Some((state.x, steps));
        };
        if state.set.len() <= n {
            state.set.push(k);
            state.a.push(0.0);
            continue;
        }
        // Full simplex: try every exchange and keep the highest common energy.
        let mut best: Option<SetSolution> = None;
        for j in 0..state.set.len() {
            let mut trial = state.clone();
            trial.set[j] = k;
            trial.a[j] = 0.0;
            normalize(&mut trial.a);
            let Some(sol) = solve_on_set(snapshot, trial, &mut steps) else {
                continue;
            };
            if best.as_ref().map_or(true, |b| sol.s > b.s) {
                best = Some(sol);
            }
        }
        state = best?;
    }
    None
}

#[derive(Clone)]
struct SetSolution {
    set: Vec<usize>,
    a: Vec<f64>,
    x: DVector<f64>,
    s: f64,
}

fn normalize(a: &mut [f64]) {
    let total: f64 = a.iter().map(|v| v.max(0.0)).sum();
    if total > 0.0 {
        for v in a.iter_mut() {
            *v = v.max(0.0) / total;
        }
    } else {
        let u = 1.0 / a.len() as f64;
        a.iter_mut().for_each(|v| *v = u);
    }
}

/// Solves the optimality system on `state.set`, dropping members whose
/// weight reaches zero, until Newton converges with nonnegative weights.
fn solve_on_set(snapshot: &EnergySnapshot, mut state: SetSolution, steps: &mut usize) -> Option<SetSolution> {
    state.s = state.set.iter().map(|&k| snapshot.energy(k, &state.x)).fold(f64::NEG_INFINITY, f64::max);
    while !state.set.is_empty() {
        match newton(snapshot, &state.set, &mut state.x, &mut state.a, &mut state.s, steps) {
            Newton::Converged => return Some(state),
            Newton::Blocked(i) => {
                state.set.remove(i);
                state.a.remove(i);
                normalize(&mut state.a);
            }
            Newton::Failed => return None,
        }
    }
    None
}

enum Newton {
    Converged,
    /// The weight at this position of the set hit zero.
    Blocked(usize),
    Failed,
}

/// Newton iteration on `(x, alpha, s)` for a fixed active set, with steps
/// shortened to keep every weight nonnegative.
fn newton(
    snapshot: &EnergySnapshot,
    set: &[usize],
    x: &mut DVector<f64>,
    a: &mut Vec<f64>,
    s: &mut f64,
    steps: &mut usize,
) -> Newton {
    let n = x.len();
    let m = set.len();
    let dim = n + m + 1;
    let members = snapshot.members();
    let residual = |x: &DVector<f64>, a: &[f64], s: f64| {
        let mut f = DVector::zeros(dim);
        for (i, &k) in set.iter().enumerate() {
            let g = &members[k].p * (x - &members[k].xhat);
            for r in 0..n {
                f[r] += a[i] * g[r];
            }
            f[n + i] = snapshot.energy(k, x) - s;
        }
        f[n + m] = a.iter().sum::<f64>() - 1.0;
        f
    };
    let mut f = residual(x, a, *s);
    for _ in 0..NEWTON_ITERS {
        let scale = 1.0 + s.abs();
        if linalg::norm(&f) <= 1e-14 * scale {
            return Newton::Converged;
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for (i, &k) in set.iter().enumerate() {
            let p = &members[k].p;
            let g = p * (&*x - &members[k].xhat);
            let mut block = jac.view_mut((0, 0), (n, n));
            block += p * a[i];
            for r in 0..n {
                jac[(r, n + i)] = g[r];
                jac[(n + i, r)] = 2.0 * g[r];
            }
            jac[(n + i, n + m)] = -1.0;
            jac[(n + m, n + i)] = 1.0;
        }
        let Some(delta) = jac.lu().solve(&(-&f)) else {
            return Newton::Failed;
        };
        if !linalg::all_finite(delta.as_slice()) {
            return Newton::Failed;
        }
        *steps += 1;
        let mut tau = 1.0;
        let mut blocking = None;
        for i in 0..m {
            let d = delta[n + i];
            if d < 0.0 && a[i] + d < 0.0 {
                let t = a[i] / -d;
                if t < tau {
                    tau = t;
                    blocking = Some(i);
                }
            }
        }
        *x += delta.rows(0, n) * tau;
        for i in 0..m {
            a[i] = (a[i] + tau * delta[n + i]).max(0.0);
        }
        *s += tau * delta[n + m];
        if let Some(i) = blocking {
            a[i] = 0.0;
            return Newton::Blocked(i);
        }
        let tiny = delta.amax() <= 1e-15 * (1.0 + x.amax().max(s.abs()));
        f = residual(x, a, *s);
        if tiny {
            return Newton::Converged;
        }
    }
    // Accept a stalled iteration when it sits at roundoff level.
    if linalg::norm(&f) <= 1e-10 * (1.0 + s.abs()) {
        Newton::Converged
    } else {
        Newton::Failed
    }
}
