//! The three ensemble estimators.
//!
//! * [`risk_neutral`]: minimizer of the mean energy, the precision-weighted
//!   average of the member filters.
//! * [`entropic_trajectory`]: minimizer of the entropic risk of the energy,
//!   solved per grid point by Barzilai-Borwein descent.
//! * [`worst_case_trajectory`]: minimizer of the maximal energy, reached by
//!   continuation in the risk aversion and then polished and certified.

pub mod certificate;
pub mod descent;
mod worst_case;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::kalman::{FilterBank, FilterTrajectory};
use crate::linalg;
use crate::risk::EnergySnapshot;

pub use certificate::{certify, WorstCaseCertificate};
pub use descent::{BbVariant, DescentConfig, DescentOutcome};
pub use worst_case::{polish_minimax, worst_case_point, CONTINUATION_SCHEDULE};

/// Identifies an estimator by its risk aversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorLabel {
    /// `theta = 0`
    RiskNeutral,
    Entropic(f64),
    /// `theta = inf`
    WorstCase,
}

impl EstimatorLabel {
    /// Risk aversion as a number; `0` and `inf` for the two limits.
    pub fn theta(&self) -> f64 {
        match self {
            EstimatorLabel::RiskNeutral => 0.0,
            EstimatorLabel::Entropic(t) => *t,
            EstimatorLabel::WorstCase => f64::INFINITY,
        }
    }
}

impl core::fmt::Display for EstimatorLabel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EstimatorLabel::RiskNeutral => f.write_str("0"),
            EstimatorLabel::Entropic(t) => write!(f, "{t}"),
            EstimatorLabel::WorstCase => f.write_str("inf"),
        }
    }
}

/// Solver record of one grid point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointDiagnostics {
    pub iterations: usize,
    /// Final gradient norm (entropic) or certificate residual (worst case).
    pub grad_norm: f64,
    pub converged: bool,
    /// Softmax weights `c_k` of all members (entropic) or `alpha_k` aligned with `active_set` (worst case).
    pub weights: Vec<f64>,
    /// Active members (worst case only).
    pub active_set: Vec<usize>,
    /// Fixed-point residual (entropic) or certificate residual (worst case).
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTrajectory {
    pub label: EstimatorLabel,
    pub x: Vec<DVector<f64>>,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl EstimatorTrajectory {
    /// Grid indices whose solve did not converge (or was not certified).
    pub fn unconverged(&self) -> Vec<usize> {
        self.diagnostics
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.converged)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }
}

/// Precision-weighted average `(sum_k P_k)^{-1} sum_k P_k xhat_k` at every grid point.
pub fn risk_neutral(bank: &FilterBank) -> Result<EstimatorTrajectory> {
    let grid = bank.grid();
    let n = bank.state_dim();
    let mut xs = Vec::with_capacity(grid.len());
    for ti in 0..grid.len() {
        let mut total = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for tr in bank.trajectories() {
            total += &tr.p[ti];
            rhs += &tr.p[ti] * &tr.xhat[ti];
        }
        let x = linalg::spd_solve(&total, &rhs).map_err(|e| e.at_grid_point(ti, grid.time(ti)))?;
        xs.push(x);
    }
    Ok(EstimatorTrajectory {
        label: EstimatorLabel::RiskNeutral,
        diagnostics: alloc::vec![
            PointDiagnostics {
                converged: true,
                ..Default::default()
            };
            xs.len()
        ],
        x: xs,
    })
}

/// `| x - (sum w_k P_k)^{-1} sum w_k P_k xhat_k |` with softmax weights of `theta V_k(x)`.
pub fn fixed_point_residual(snapshot: &EnergySnapshot, theta: f64, x: &DVector<f64>) -> f64 {
    let c = snapshot.softmax_weights(theta, x);
    weighted_center(snapshot, &c)
        .map(|center| linalg::norm(&(x - center)))
        .unwrap_or(f64::INFINITY)
}

/// `(sum w_k P_k)^{-1} sum w_k P_k xhat_k`.
pub fn weighted_center(snapshot: &EnergySnapshot, w: &[f64]) -> Result<DVector<f64>> {
    let n = snapshot.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (slice, wk) in snapshot.members().iter().zip(w) {
        if *wk == 0.0 {
            continue;
        }
        m += &slice.p * *wk;
        rhs += &slice.p * &slice.xhat * *wk;
    }
    linalg::spd_solve(&m, &rhs)
}

/// Minimizes the entropic objective at one time, starting from `x_init`.
pub fn entropic_minimize(
    snapshot: &EnergySnapshot,
    theta: f64,
    x_init: &DVector<f64>,
    cfg: &DescentConfig,
) -> Result<(DVector<f64>, PointDiagnostics)> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("risk aversion {theta} must lie in (0, inf)")));
    }
    let out = descent::minimize_entropic(snapshot, theta, x_init, cfg)?;
    let weights = snapshot.softmax_weights(theta, &out.x);
    let residual = weighted_center(snapshot, &weights)
        .map(|c| linalg::norm(&(&out.x - c)))
        .unwrap_or(f64::INFINITY);
    Ok((
        out.x,
        PointDiagnostics {
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            converged: out.converged,
            weights,
            active_set: Vec::new(),
            residual,
        },
    ))
}

pub fn entropic_trajectory(
    bank: &FilterBank,
    theta: f64,
    cfg: &DescentConfig,
    warm_start: Option<&EstimatorTrajectory>,
) -> Result<EstimatorTrajectory> {
    entropic_trajectory_with(bank, theta, cfg, warm_start, &Sequential)
}

/// Entropic estimator on the whole grid.
///
/// With `warm_start`, every grid point starts from the given trajectory at
/// the same time and the points are solved independently through `exec`.
/// Without it the solve marches forward in time, each point starting from
/// the previous solution (the first from the risk-neutral estimate).
pub fn entropic_trajectory_with<E: Executor>(
    bank: &FilterBank,
    theta: f64,
    cfg: &DescentConfig,
    warm_start: Option<&EstimatorTrajectory>,
    exec: &E,
) -> Result<EstimatorTrajectory> {
    let grid = *bank.grid();
    let solve = |ti: usize, init: &DVector<f64>| {
        let snap = bank.snapshot(ti)?;
        entropic_minimize(&snap, theta, init, cfg).map_err(|e| e.at_grid_point(ti, grid.time(ti)))
    };
    let points: Vec<(DVector<f64>, PointDiagnostics)> = match warm_start {
        Some(ws) => {
            if ws.x.len() != grid.len() {
                return Err(Error::Dimension("warm start length differs from grid".into()));
            }
            exec.map_indices(grid.len(), |ti| solve(ti, &ws.x[ti]))
                .into_iter()
                .collect::<Result<_>>()?
        }
        None => {
            let neutral = risk_neutral(bank)?;
            let mut out: Vec<(DVector<f64>, PointDiagnostics)> = Vec::with_capacity(grid.len());
            for ti in 0..grid.len() {
                let init = out.last().map(|(x, _)| x.clone()).unwrap_or_else(|| neutral.x[0].clone());
                out.push(solve(ti, &init)?);
            }
            out
        }
    };
    let (x, diagnostics) = points.into_iter().unzip();
    Ok(EstimatorTrajectory {
        label: EstimatorLabel::Entropic(theta),
        x,
        diagnostics,
    })
}

pub fn worst_case_trajectory(
    bank: &FilterBank,
    cfg: &DescentConfig,
    warm_start: Option<&EstimatorTrajectory>,
) -> Result<EstimatorTrajectory> {
    worst_case_trajectory_with(bank, cfg, warm_start, &Sequential)
}

/// Worst-case estimator on the whole grid; points are independent.
///
/// Each point starts from `warm_start` (default: the risk-neutral estimate).
/// An entropic warm start skips the continuation stages at or below its
/// risk aversion.
pub fn worst_case_trajectory_with<E: Executor>(
    bank: &FilterBank,
    cfg: &DescentConfig,
    warm_start: Option<&EstimatorTrajectory>,
    exec: &E,
) -> Result<EstimatorTrajectory> {
    let grid = *bank.grid();
    let neutral;
    let start = match warm_start {
        Some(ws) => ws,
        None => {
            neutral = risk_neutral(bank)?;
            &neutral
        }
    };
    if start.x.len() != grid.len() {
        return Err(Error::Dimension("warm start length differs from grid".into()));
    }
    let skip_below = match start.label {
        EstimatorLabel::Entropic(t) => t,
        _ => 0.0,
    };
    let points: Vec<(DVector<f64>, PointDiagnostics)> = exec
        .map_indices(grid.len(), |ti| {
            let snap = bank.snapshot(ti)?;
            worst_case_point(&snap, &start.x[ti], cfg, skip_below).map_err(|e| e.at_grid_point(ti, grid.time(ti)))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let (x, diagnostics) = points.into_iter().unzip();
    Ok(EstimatorTrajectory {
        label: EstimatorLabel::WorstCase,
        x,
        diagnostics,
    })
}

/// Time derivative of the entropic estimator at grid index `ti`,
/// `-M^{-1} V` from implicit differentiation of the optimality condition.
///
/// The common exponential factor `exp(theta V_k)` is replaced by the
/// softmax weights, which rescales `M` and `V` alike.
pub fn entropic_time_derivative(
    bank: &FilterBank,
    theta: f64,
    traj: &EstimatorTrajectory,
    ti: usize,
) -> Result<DVector<f64>> {
    let snap = bank.snapshot(ti)?;
    let x = traj
        .x
        .get(ti)
        .ok_or(Error::OffGrid { t: ti as f64 * bank.grid().dt() })?;
    let n = x.len();
    let c = snap.softmax_weights(theta, x);
    let mut m = DMatrix::zeros(n, n);
    let mut v = DVector::zeros(n);
    for (k, (slice, ck)) in snap.members().iter().zip(&c).enumerate() {
        if *ck == 0.0 {
            continue;
        }
        let (xdot, pdot, w) = bank.member_rates(k, ti)?;
        let d = x - &slice.xhat;
        let pd = &slice.p * &d;
        m += (&slice.p + &pd * pd.transpose() * (2.0 * theta)) * *ck;
        let p_xdot = &slice.p * &xdot;
        // d/dt V_k(t, x) at fixed x.
        let energy_rate = w + linalg::quad_form(&pdot, &d) - 2.0 * d.dot(&p_xdot);
        v += (&pdot * &d - &p_xdot) * *ck + &pd * (theta * ck * energy_rate);
    }
    let lu = m.lu();
    let sol = lu.solve(&v).ok_or(Error::Singular("entropic time-derivative matrix"))?;
    Ok(-sol)
}

/// `| x(t_i) - xhat_ref(t_i) |_{P_ref(t_i)}`.
pub fn weighted_error(traj: &EstimatorTrajectory, reference: &FilterTrajectory, ti: usize) -> Result<f64> {
    let x = traj.x.get(ti).ok_or(Error::OffGrid { t: ti as f64 })?;
    let d = x - &reference.xhat[ti];
    Ok(linalg::quad_form(&reference.p[ti], &d).max(0.0).sqrt())
}

/// `J(t, theta) = max_{k,j} V_k - V_j` evaluated at the estimate.
pub fn entropic_error_exponent(bank: &FilterBank, traj: &EstimatorTrajectory, ti: usize) -> Result<f64> {
    let snap = bank.snapshot(ti)?;
    let x = traj.x.get(ti).ok_or(Error::OffGrid { t: ti as f64 })?;
    Ok(snap.energy_spread(x))
}
