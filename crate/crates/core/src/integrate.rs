//! Fixed-step classical Runge-Kutta integration on a measurement grid.
//!
//! Each grid interval is split into `substeps` uniform RK4 steps, so the
//! right-hand side is only ever evaluated inside one interval of the
//! piecewise-linear input signals.

use alloc::vec::Vec;

use nalgebra::DVector;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::model::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IntegratorConfig {
    /// RK4 steps per grid interval.
    pub substeps: usize,
    /// Tolerance for the covariance/precision consistency check `|Pi P - I|`.
    pub consistency_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            substeps: 10,
            consistency_tol: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn with_substeps(substeps: usize) -> Self {
        IntegratorConfig {
            substeps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One classical RK4 step of size `h` from `(t, x)`.
pub fn rk4_step<F>(rhs: &mut F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = rhs(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// Integrates `x' = rhs(t, x)` and returns the state at every grid point.
pub fn rk4_path<F>(rhs: F, x_init: &DVector<f64>, grid: &TimeGrid, cfg: &IntegratorConfig) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    rk4_path_with(rhs, x_init, grid, cfg, |_| {})
}

/// Like [`rk4_path`], calling `after_step` on the state after every RK4 step.
///
/// Used to project matrix-valued states back onto the symmetric matrices.
pub fn rk4_path_with<F, G>(
    mut rhs: F,
    x_init: &DVector<f64>,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
    mut after_step: G,
) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    G: FnMut(&mut DVector<f64>),
{
    cfg.validate()?;
    let mut out = Vec::with_capacity(grid.len());
    let mut x = x_init.clone();
    out.push(x.clone());
    for k in 0..grid.num_intervals() {
        let t0 = grid.time(k);
        let t1 = grid.time(k + 1);
        let h = (t1 - t0) / cfg.substeps as f64;
        for j in 0..cfg.substeps {
            let t = t0 + j as f64 * h;
            x = rk4_step(&mut rhs, t, &x, h)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { t: t + h });
            }
            after_step(&mut x);
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Observed order of accuracy from runs with 5, 10 and 20 substeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEstimate {
    /// `log2(e_coarse / e_fine)`, or `None` when both differences sit at roundoff.
    pub order: Option<f64>,
    /// Sup-grid difference between the 5- and 10-substep runs.
    pub diff_coarse: f64,
    /// Sup-grid difference between the 10- and 20-substep runs.
    pub diff_fine: f64,
}

/// Richardson-style estimate of the observed convergence order.
pub fn convergence_order<F>(mut rhs: F, x_init: &DVector<f64>, grid: &TimeGrid) -> Result<OrderEstimate>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut run = |substeps| {
        rk4_path(
            &mut rhs,
            x_init,
            grid,
            &IntegratorConfig::with_substeps(substeps),
        )
    };
    let p5 = run(5)?;
    let p10 = run(10)?;
    let p20 = run(20)?;
    let sup_diff = |a: &[DVector<f64>], b: &[DVector<f64>]| {
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - v).amax())
            .fold(0.0, f64::max)
    };
    let scale = p20.iter().map(|v| v.amax()).fold(1.0, f64::max);
    let diff_coarse = sup_diff(&p5, &p10);
    let diff_fine = sup_diff(&p10, &p20);
    let floor = 1e3 * f64::EPSILON * scale;
    let order = if diff_fine <= floor || diff_coarse <= floor {
        None
    } else {
        Some((diff_coarse / diff_fine).log2())
    };
    Ok(OrderEstimate {
        order,
        diff_coarse,
        diff_fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::DMatrix;

    fn grid(t_end: f64, m: usize) -> TimeGrid {
        TimeGrid::new(t_end, m).unwrap()
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let path = rk4_path(
            |_, x| Ok(DVector::zeros(x.len())),
            &c,
            &grid(1.0, 7),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(path.len(), 8);
        assert!(path.iter().all(|v| v == &c));
    }

    #[test]
    fn exponential_growth() {
        let path = rk4_path(
            |_, x| Ok(x.clone()),
            &DVector::from_element(1, 1.0),
            &grid(1.0, 100),
            &IntegratorConfig::with_substeps(10),
        )
        .unwrap();
        let e = core::f64::consts::E;
        assert!((path[100][0] - e).abs() / e < 1e-9);
    }

    #[test]
    fn separable_decay() {
        let g = grid(2.0, 50);
        let path = rk4_path(
            |t, x| Ok(-x / (1.0 + t)),
            &DVector::from_element(1, 1.0),
            &g,
            &IntegratorConfig::default(),
        )
        .unwrap();
        for (k, v) in path.iter().enumerate() {
            let exact = 1.0 / (1.0 + g.time(k));
            assert!((v[0] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_reports_time() {
        let err = rk4_path(
            |_, x| Ok(x.map(|v| v * v * 1e300)),
            &DVector::from_element(1, 10.0),
            &grid(1.0, 10),
            &IntegratorConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { t } if t > 0.0 && t <= 0.1 + 1e-12));
    }

    #[test]
    fn order_of_smooth_problem_is_four() {
        let est = convergence_order(|_, x| Ok(x.clone()), &DVector::from_element(1, 1.0), &grid(1.0, 4)).unwrap();
        let order = est.order.unwrap();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn order_degrades_with_kink_inside_substeps() {
        // Kink at t = 0.5 + 1/70, off every substep lattice of 5, 10 or 20 per interval.
        let kink = 0.5 + 1.0 / 70.0;
        let est = convergence_order(
            move |t, _| Ok(DVector::from_element(1, (t - kink).abs())),
            &DVector::from_element(1, 0.0),
            &grid(1.0, 2),
        )
        .unwrap();
        let order = est.order.unwrap();
        assert!(order < 3.5, "order {order}");
    }

    #[test]
    fn polynomial_rhs_is_exact() {
        // x' = t^2 has a cubic solution, integrated exactly by RK4.
        let est = convergence_order(
            |t, _| Ok(DVector::from_element(1, t * t)),
            &DVector::from_element(1, 0.0),
            &grid(1.0, 4),
        )
        .unwrap();
        assert!(est.order.is_none());
    }

    fn taylor(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let mut acc = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=terms {
            term = &term * m / k as f64;
            acc += &term;
        }
        acc
    }

    #[test]
    fn one_step_map_matches_taylor_polynomial() {
        let mut seed = 0x1234_5678_u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| next());
            let h = 0.1 / a.norm();
            let cfg = IntegratorConfig::with_substeps(1);
            let step = grid(h, 1);
            // Columns of the one-step map from unit initial states.
            let mut map = DMatrix::zeros(3, 3);
            for j in 0..3 {
                let e = DVector::from_fn(3, |i, _| if i == j { 1.0 } else { 0.0 });
                let path = rk4_path(|_, x| Ok(&a * x), &e, &step, &cfg).unwrap();
                map.set_column(j, &path[1]);
            }
            let ha = &a * h;
            let poly = taylor(&ha, 4);
            assert!((&map - &poly).norm() / poly.norm() <= 1e-10);
            let exact = taylor(&ha, 30);
            // Truncation starts at the fifth-order term.
            assert!((&map - &exact).norm() <= 0.1f64.powi(5) / 120.0 * 1.2 * exact.norm());
        }
    }

    #[test]
    fn deterministic_bits() {
        let f = |t: f64, x: &DVector<f64>| Ok(DVector::from_vec(vec![x[1], -x[0] - 0.3 * x[1] + t.sin()]));
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let a = rk4_path(f, &x0, &grid(3.0, 300), &IntegratorConfig::default()).unwrap();
        let b = rk4_path(f, &x0, &grid(3.0, 300), &IntegratorConfig::default()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            for (p, q) in u.iter().zip(v.iter()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn zero_substeps_rejected() {
        assert!(rk4_path(
            |_, x| Ok(x.clone()),
            &DVector::from_element(1, 1.0),
            &grid(1.0, 2),
            &IntegratorConfig::with_substeps(0)
        )
        .is_err());
    }
}
