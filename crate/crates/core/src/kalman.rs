//! Kalman-Bucy filters for single members and for a whole ensemble.
//!
//! Each member integrates the filter state `xhat` jointly with the
//! covariance `Pi` as one `n + n^2` dimensional ODE. The precision
//! `P = Pi^{-1}` is recovered by Cholesky inversion at the grid points and
//! the residual energy `r(t) = int_0^t |y - C xhat|^2_{Q^{-1}}` is
//! accumulated with the trapezoidal rule.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::integrate::{rk4_path_with, IntegratorConfig};
use crate::linalg;
use crate::model::{Ensemble, ParamTuple, Signal, TimeGrid};
use crate::risk::{EnergySnapshot, MemberSlice};

/// Per-member quantities derived once from the parameter tuple.
struct MemberModel<'a> {
    member: &'a ParamTuple,
    ens: &'a Ensemble,
    /// `C^T Q^{-1}`
    ct_qinv: DMatrix<f64>,
    /// `C^T Q^{-1} C`
    ct_qinv_c: DMatrix<f64>,
    /// `B R B^T`
    brbt: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

impl<'a> MemberModel<'a> {
    fn new(member: &'a ParamTuple, ens: &'a Ensemble) -> Result<Self> {
        let n = ens.state_dim();
        if member.state_dim() != n || member.r.dim() != ens.input_dim() || member.q.dim() != ens.output_dim() {
            return Err(Error::Dimension("member does not match the ensemble's shared matrices".into()));
        }
        let q_inv = member.q.inverse();
        let ct_qinv = ens.c().transpose() * &q_inv;
        let ct_qinv_c = &ct_qinv * ens.c();
        let brbt = ens.b() * member.r.as_matrix() * ens.b().transpose();
        Ok(MemberModel {
            member,
            ens,
            ct_qinv,
            ct_qinv_c,
            brbt,
            q_inv,
        })
    }

    fn n(&self) -> usize {
        self.ens.state_dim()
    }

    /// Filter right-hand side `A x + f(t) + Pi C^T Q^{-1} (y - C x)`.
    fn xhat_rhs(&self, t: f64, x: &DVector<f64>, pi: &DMatrix<f64>, y_t: &DVector<f64>) -> Result<DVector<f64>> {
        let innov = y_t - self.ens.c() * x;
        let mut dx = &self.member.a * x + pi * (&self.ct_qinv * innov);
        self.ens.forcing().add_to(t, &mut dx)?;
        Ok(dx)
    }

    /// Covariance Riccati right-hand side.
    fn pi_rhs(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let a = &self.member.a;
        a * pi + pi * a.transpose() - pi * &self.ct_qinv_c * pi + &self.brbt
    }

    /// Precision Riccati right-hand side `-A^T P - P A - P B R B^T P + C^T Q^{-1} C`.
    fn p_rhs(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let a = &self.member.a;
        -(a.transpose() * p) - p * a - p * &self.brbt * p + &self.ct_qinv_c
    }

    fn residual_weight(&self, x: &DVector<f64>, y_t: &DVector<f64>) -> f64 {
        let innov = y_t - self.ens.c() * x;
        linalg::quad_form(&self.q_inv, &innov)
    }
}

fn pack(x: &DVector<f64>, m: &DMatrix<f64>) -> DVector<f64> {
    let n = x.len();
    let mut z = DVector::zeros(n + n * n);
    z.rows_mut(0, n).copy_from(x);
    z.rows_mut(n, n * n).copy_from_slice(m.as_slice());
    z
}

fn unpack_matrix(z: &DVector<f64>, offset: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, &z.as_slice()[offset..offset + n * n])
}

fn symmetrize_block(z: &mut DVector<f64>, offset: usize, n: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = offset + j * n + i;
            let b = offset + i * n + j;
            worst = worst.max((z[a] - z[b]).abs());
            let avg = 0.5 * (z[a] + z[b]);
            z[a] = avg;
            z[b] = avg;
        }
    }
    worst
}

/// One member's filter on the measurement grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    pub member: usize,
    pub xhat: Vec<DVector<f64>>,
    /// Covariance `Pi_k(t_i)`.
    pub pi: Vec<DMatrix<f64>>,
    /// Precision `P_k(t_i) = Pi_k(t_i)^{-1}`.
    pub p: Vec<DMatrix<f64>>,
    /// Cumulative residual energy `r_k(t_i)`.
    pub r: Vec<f64>,
    /// Largest asymmetry of `Pi` observed right before the per-step symmetrization.
    pub max_asymmetry: f64,
}

impl FilterTrajectory {
    /// Largest `|Pi P - I|_2` over the grid.
    pub fn inverse_defect(&self) -> f64 {
        self.pi
            .iter()
            .zip(&self.p)
            .map(|(pi, p)| {
                let n = pi.nrows();
                linalg::spectral_norm(&(pi * p - DMatrix::identity(n, n)))
            })
            .fold(0.0, f64::max)
    }
}

/// Runs the Kalman-Bucy filter of `member` against the measurement `y`.
///
/// `member_index` only labels the result. The grid is the measurement grid of `y`.
pub fn run_filter(
    member_index: usize,
    member: &ParamTuple,
    ens: &Ensemble,
    y: &Signal,
    cfg: &IntegratorConfig,
) -> Result<FilterTrajectory> {
    if y.dim() != ens.output_dim() {
        return Err(Error::Dimension("measurement dimension differs from C".into()));
    }
    let model = MemberModel::new(member, ens)?;
    let n = model.n();
    let grid = *y.grid();

    let mut max_asym = 0.0_f64;
    let z0 = pack(ens.x0(), member.gamma.as_matrix());
    let path = rk4_path_with(
        |t, z| {
            let x = z.rows(0, n).into_owned();
            let pi = unpack_matrix(z, n, n);
            let y_t = y.eval(t)?;
            let dx = model.xhat_rhs(t, &x, &pi, &y_t)?;
            let dpi = model.pi_rhs(&pi);
            Ok(pack(&dx, &dpi))
        },
        &z0,
        &grid,
        cfg,
        |z| max_asym = max_asym.max(symmetrize_block(z, n, n)),
    )?;

    let mut xhat = Vec::with_capacity(grid.len());
    let mut pis = Vec::with_capacity(grid.len());
    let mut ps = Vec::with_capacity(grid.len());
    let mut r = Vec::with_capacity(grid.len());
    let mut prev_weight = 0.0;
    for (i, z) in path.iter().enumerate() {
        let t = grid.time(i);
        let x = z.rows(0, n).into_owned();
        let pi = unpack_matrix(z, n, n);
        let p = linalg::spd_inverse(&pi).map_err(|_| Error::RiccatiBreakdown { t })?;
        let defect = (&pi * &p - DMatrix::identity(n, n)).norm();
        if defect > cfg.consistency_tol {
            return Err(Error::RiccatiBreakdown { t });
        }
        let w = model.residual_weight(&x, y.at_index(i));
        let acc = match r.last() {
            None => 0.0,
            Some(&last) => last + 0.5 * grid.dt() * (prev_weight + w),
        };
        prev_weight = w;
        r.push(acc);
        xhat.push(x);
        pis.push(pi);
        ps.push(p);
    }

    Ok(FilterTrajectory {
        member: member_index,
        xhat,
        pi: pis,
        p: ps,
        r,
        max_asymmetry: max_asym,
    })
}

/// Integrates the precision Riccati equation directly from `Gamma^{-1}`.
///
/// Serves as an independent cross-check of the inverted covariance.
pub fn precision_direct(
    member: &ParamTuple,
    ens: &Ensemble,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let model = MemberModel::new(member, ens)?;
    let n = model.n();
    let p0 = DVector::from_column_slice(member.gamma.inverse().as_slice());
    let path = rk4_path_with(
        |_, z| {
            let p = DMatrix::from_column_slice(n, n, z.as_slice());
            Ok(DVector::from_column_slice(model.p_rhs(&p).as_slice()))
        },
        &p0,
        grid,
        cfg,
        |z| {
            symmetrize_block(z, 0, n);
        },
    )?;
    Ok(path
        .iter()
        .map(|z| DMatrix::from_column_slice(n, n, z.as_slice()))
        .collect())
}

/// All member filters on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    ensemble: Ensemble,
    y: Signal,
    trajectories: Vec<FilterTrajectory>,
    /// Smallest eigenvalue of any `P_k(t)`.
    pub lambda_min: f64,
    /// Largest eigenvalue of any `P_k(t)`.
    pub lambda_max: f64,
}

pub fn run_bank(ens: &Ensemble, y: &Signal, cfg: &IntegratorConfig) -> Result<FilterBank> {
    run_bank_with(ens, y, cfg, &Sequential)
}

/// Runs every member filter, possibly concurrently through `exec`.
pub fn run_bank_with<E: Executor>(ens: &Ensemble, y: &Signal, cfg: &IntegratorConfig, exec: &E) -> Result<FilterBank> {
    let results = exec.map_indices(ens.len(), |k| {
        run_filter(k, &ens.members()[k], ens, y, cfg).map_err(|e| e.for_member(k))
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;
    FilterBank::from_parts(ens.clone(), y.clone(), trajectories)
}

impl FilterBank {
    /// Assembles a bank and computes the precision eigenvalue envelope.
    pub fn from_parts(ensemble: Ensemble, y: Signal, trajectories: Vec<FilterTrajectory>) -> Result<Self> {
        if trajectories.len() != ensemble.len() {
            return Err(Error::Dimension("one trajectory per member required".into()));
        }
        let m = y.grid().len();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for tr in &trajectories {
            if tr.xhat.len() != m || tr.p.len() != m || tr.r.len() != m {
                return Err(Error::Dimension("trajectory length differs from grid".into()));
            }
            for p in &tr.p {
                let (a, b) = linalg::sym_eigen_range(p);
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(FilterBank {
            ensemble,
            y,
            trajectories,
            lambda_min: lo,
            lambda_max: hi,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn measurement(&self) -> &Signal {
        &self.y
    }

    pub fn grid(&self) -> &TimeGrid {
        self.y.grid()
    }

    pub fn trajectories(&self) -> &[FilterTrajectory] {
        &self.trajectories
    }

    pub fn trajectory(&self, k: usize) -> &FilterTrajectory {
        &self.trajectories[k]
    }

    /// Number of members `N`.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.ensemble.state_dim()
    }

    fn check_index(&self, ti: usize) -> Result<()> {
        if ti >= self.grid().len() {
            return Err(Error::OffGrid {
                t: ti as f64 * self.grid().dt(),
            });
        }
        Ok(())
    }

    /// `V_k(t_i, x) = |x - xhat_k(t_i)|^2_{P_k(t_i)} + r_k(t_i)`.
    pub fn value_fn(&self, k: usize, ti: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_index(ti)?;
        let tr = &self.trajectories[k];
        let d = x - &tr.xhat[ti];
        Ok(linalg::quad_form(&tr.p[ti], &d) + tr.r[ti])
    }

    /// Value function at a time given in seconds; must be a grid point.
    pub fn value_fn_at(&self, k: usize, t: f64, x: &DVector<f64>) -> Result<f64> {
        self.value_fn(k, self.grid().index_of(t)?, x)
    }

    /// `(P_k, xhat_k, r_k)` of every member at grid index `ti`.
    pub fn snapshot(&self, ti: usize) -> Result<EnergySnapshot> {
        self.check_index(ti)?;
        Ok(EnergySnapshot::new(
            self.trajectories
                .iter()
                .map(|tr| MemberSlice {
                    p: tr.p[ti].clone(),
                    xhat: tr.xhat[ti].clone(),
                    r: tr.r[ti],
                })
                .collect(),
        ))
    }

    /// Time derivatives of member `k` at grid index `ti`: `(d xhat/dt, dP/dt, |y - C xhat|^2_{Q^{-1}})`.
    pub fn member_rates(&self, k: usize, ti: usize) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        self.check_index(ti)?;
        let model = MemberModel::new(&self.ensemble.members()[k], &self.ensemble)?;
        let tr = &self.trajectories[k];
        let t = self.grid().time(ti);
        let y_t = self.y.at_index(ti);
        let xdot = model.xhat_rhs(t, &tr.xhat[ti], &tr.pi[ti], y_t)?;
        let pdot = model.p_rhs(&tr.p[ti]);
        let w = model.residual_weight(&tr.xhat[ti], y_t);
        Ok((xdot, pdot, w))
    }
}
