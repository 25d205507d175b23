//! Brute-force reference computations used by tests and the verification suites.
//!
//! * [`DiscreteEnergyQp`]: the minimum-energy problem on a coarse grid with
//!   forward-Euler dynamics, solved through its dense KKT system.
//! * [`dense_grid_minimize`]: exhaustive lattice search in one or two dimensions.
//! * [`gradient`] / [`jacobian`]: central finite differences with an error gauge.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::model::{Ensemble, ParamTuple, Signal};

/// Minimum-energy problem on `K` forward-Euler steps of length `h`.
///
/// Unknowns are the initial disturbance `eta` and the inputs `v_0, ..., v_{K-1}`;
/// `x_0 = x0 + eta`, `x_{j+1} = x_j + h (A x_j + B v_j + f(t_j))`. The cost is
///
/// ```text
/// |eta|^2_{Gamma^-1} + h sum_j |v_j|^2_{R^-1} + h sum_j |y(t_j) - C x_j|^2_{Q^-1}
/// ```
///
/// with the measurement sum over the left points `j < K`.
#[derive(Debug, Clone)]
pub struct DiscreteEnergyQp {
    h: f64,
    steps: usize,
    n: usize,
    m: usize,
    /// `x_j = phi[j] z + offset[j]` for the stacked unknowns `z`.
    phi: Vec<DMatrix<f64>>,
    offset: Vec<DVector<f64>>,
    gamma_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    c: DMatrix<f64>,
    y: Vec<DVector<f64>>,
}

impl DiscreteEnergyQp {
    /// Builds the problem on `[0, t_end]` with `steps` intervals; `y` is
    /// evaluated (interpolated) at the coarse times.
    pub fn new(member: &ParamTuple, ens: &Ensemble, y: &Signal, t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("at least one step required".into()));
        }
        let n = ens.state_dim();
        let m = ens.input_dim();
        let h = t_end / steps as f64;
        let unknowns = n + steps * m;
        let step_map = DMatrix::identity(n, n) + &member.a * h;
        let mut phi = Vec::with_capacity(steps + 1);
        let mut offset = Vec::with_capacity(steps + 1);
        let mut p0 = DMatrix::zeros(n, unknowns);
        p0.view_mut((0, 0), (n, n)).fill_with_identity();
        phi.push(p0);
        offset.push(ens.x0().clone());
        let mut yv = Vec::with_capacity(steps);
        for j in 0..steps {
            let t = j as f64 * h;
            yv.push(y.eval(t)?);
            let mut next = &step_map * &phi[j];
            let mut bcol = next.view_mut((0, n + j * m), (n, m));
            bcol += ens.b() * h;
            let mut f = DVector::zeros(n);
            ens.forcing().add_to(t, &mut f)?;
            let off = &step_map * &offset[j] + f * h;
            phi.push(next);
            offset.push(off);
        }
        Ok(DiscreteEnergyQp {
            h,
            steps,
            n,
            m,
            phi,
            offset,
            gamma_inv: member.gamma.inverse(),
            r_inv: member.r.inverse(),
            q_inv: member.q.inverse(),
            c: ens.c().clone(),
            y: yv,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_length(&self) -> f64 {
        self.h
    }

    /// Hessian `H` and linear term `g` of `z^T H z - 2 g^T z + c0` restricted
    /// to the first `t_index` steps, together with the constant `c0`.
    fn quadratic(&self, t_index: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
        let (n, m) = (self.n, self.m);
        let dim = n + t_index * m;
        let mut hess = DMatrix::zeros(dim, dim);
        let mut lin = DVector::zeros(dim);
        let mut c0 = 0.0;
        hess.view_mut((0, 0), (n, n)).copy_from(&self.gamma_inv);
        for j in 0..t_index {
            let mut blk = hess.view_mut((n + j * m, n + j * m), (m, m));
            blk += &self.r_inv * self.h;
            // Measurement misfit y_j - C (phi_j z + offset_j).
            let cphi = &self.c * self.phi[j].columns(0, dim);
            let resid = &self.y[j] - &self.c * &self.offset[j];
            let wq = &self.q_inv * self.h;
            hess += cphi.transpose() * &wq * &cphi;
            lin += cphi.transpose() * &wq * &resid;
            c0 += resid.dot(&(&wq * &resid));
        }
        (hess, lin, c0)
    }

    fn value_at(&self, t_index: usize, z: &DVector<f64>) -> f64 {
        let (n, m) = (self.n, self.m);
        let eta = z.rows(0, n);
        let mut v = eta.dot(&(&self.gamma_inv * eta));
        for j in 0..t_index {
            let vj = z.rows(n + j * m, m);
            v += self.h * vj.dot(&(&self.r_inv * vj));
            let x = self.state(j, z);
            let e = &self.y[j] - &self.c * x;
            v += self.h * e.dot(&(&self.q_inv * &e));
        }
        v
    }

    fn state(&self, j: usize, z: &DVector<f64>) -> DVector<f64> {
        self.phi[j].columns(0, z.len()) * z + &self.offset[j]
    }

    /// Minimal energy of disturbances that steer the model to `xi` at step `t_index`.
    pub fn value(&self, t_index: usize, xi: &DVector<f64>) -> Result<f64> {
        if t_index > self.steps {
            return Err(Error::OffGrid { t: t_index as f64 * self.h });
        }
        if xi.len() != self.n {
            return Err(Error::Dimension("terminal state has wrong length".into()));
        }
        let (hess, lin, _) = self.quadratic(t_index);
        let dim = hess.nrows();
        let n = self.n;
        let phi = self.phi[t_index].columns(0, dim);
        let mut kkt = DMatrix::zeros(dim + n, dim + n);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&(&hess * 2.0));
        kkt.view_mut((0, dim), (dim, n)).copy_from(&phi.transpose());
        kkt.view_mut((dim, 0), (n, dim)).copy_from(&phi);
        let mut rhs = DVector::zeros(dim + n);
        rhs.rows_mut(0, dim).copy_from(&(&lin * 2.0));
        rhs.rows_mut(dim, n).copy_from(&(xi - &self.offset[t_index]));
        let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular("energy KKT system"))?;
        let z = sol.rows(0, dim).into_owned();
        Ok(self.value_at(t_index, &z))
    }

    /// Terminal state of the unconstrained minimum-energy disturbance at step `t_index`.
    pub fn minimizing_state(&self, t_index: usize) -> Result<DVector<f64>> {
        if t_index > self.steps {
            return Err(Error::OffGrid { t: t_index as f64 * self.h });
        }
        let (hess, lin, _) = self.quadratic(t_index);
        let z = hess
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .solve(&lin);
        Ok(self.state(t_index, &z))
    }
}

/// Best lattice point of a dense search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub x: DVector<f64>,
    pub value: f64,
    /// Lattice spacing per coordinate.
    pub cell: Vec<f64>,
}

/// Exhaustive search over the box `center +- radius` with `resolution + 1`
/// points per axis, in one or two dimensions.
///
/// A minimizer on the box boundary triggers one retry with a doubled radius;
/// a second boundary hit is [`Error::BoxExclusion`].
pub fn dense_grid_minimize<F>(f: F, center: &DVector<f64>, radius: &[f64], resolution: usize) -> Result<GridMinimum>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = center.len();
    if !(n == 1 || n == 2) || radius.len() != n {
        return Err(Error::InvalidParameter("dense grid search needs one or two dimensions".into()));
    }
    if resolution < 2 || radius.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParameter("resolution >= 2 and positive radii required".into()));
    }
    let mut rad = radius.to_vec();
    for _attempt in 0..2 {
        let cell: Vec<f64> = rad.iter().map(|r| 2.0 * r / resolution as f64).collect();
        let mut best = (f64::INFINITY, vec![0usize; n]);
        let count = if n == 1 { 1 } else { resolution + 1 };
        for i in 0..=resolution {
            for j in 0..count {
                let idx = if n == 1 { vec![i] } else { vec![i, j] };
                let x = DVector::from_iterator(n, (0..n).map(|d| center[d] - rad[d] + idx[d] as f64 * cell[d]));
                let v = f(&x);
                if v < best.0 {
                    best = (v, idx);
                }
            }
        }
        let on_boundary = best.1.iter().any(|&i| i == 0 || i == resolution);
        let x = DVector::from_iterator(n, (0..n).map(|d| center[d] - rad[d] + best.1[d] as f64 * cell[d]));
        if !on_boundary {
            return Ok(GridMinimum { x, value: best.0, cell });
        }
        for r in &mut rad {
            *r *= 2.0;
        }
    }
    Err(Error::BoxExclusion)
}

/// Finite-difference estimate and the gauge `max |D(h) - D(h/2)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdEstimate<T> {
    pub value: T,
    pub gauge: f64,
}

fn step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

fn central_columns<F>(f: &F, x: &DVector<f64>, scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let h = step(x[i]) * scale;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite function value in finite differences".into()));
        }
        cols.push(d);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Central-difference Jacobian of a vector function, `h_i = 1e-5 (1 + |x_i|)`.
pub fn jacobian<F>(f: F, x: &DVector<f64>) -> Result<FdEstimate<DMatrix<f64>>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let full = central_columns(&f, x, 1.0)?;
    let half = central_columns(&f, x, 0.5)?;
    let gauge = (&full - &half).amax();
    Ok(FdEstimate { value: half, gauge })
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(f: F, x: &DVector<f64>) -> Result<FdEstimate<DVector<f64>>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let est = jacobian(|z| DVector::from_element(1, f(z)), x)?;
    Ok(FdEstimate {
        value: est.value.row(0).transpose(),
        gauge: est.gauge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Forcing, SpdMatrix, TimeGrid};
    use nalgebra::dmatrix;

    fn scalar_setup() -> (Ensemble, Signal) {
        let member = ParamTuple::new(
            DMatrix::from_element(1, 1, -0.5),
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
        )
        .unwrap();
        let ens = Ensemble::new(
            vec![member],
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::from_element(1, 1.0),
            Forcing::Zero,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let y = Signal::from_fn(grid, |t| DVector::from_element(1, t.cos())).unwrap();
        (ens, y)
    }

    #[test]
    fn initial_value_is_prior_energy() {
        let (ens, y) = scalar_setup();
        let qp = DiscreteEnergyQp::new(&ens.members()[0], &ens, &y, 1.0, 20).unwrap();
        assert!(qp.value(0, ens.x0()).unwrap().abs() < 1e-14);
        let xi = DVector::from_element(1, 3.0);
        assert!((qp.value(0, &xi).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn value_is_quadratic_in_terminal_state() {
        let (ens, y) = scalar_setup();
        let qp = DiscreteEnergyQp::new(&ens.members()[0], &ens, &y, 1.0, 30).unwrap();
        let vals: Vec<f64> = (0..6)
            .map(|i| qp.value(30, &DVector::from_element(1, -1.0 + 0.5 * i as f64)).unwrap())
            .collect();
        // Third differences of a parabola vanish.
        for i in 0..3 {
            let d3 = vals[i + 3] - 3.0 * vals[i + 2] + 3.0 * vals[i + 1] - vals[i];
            assert!(d3.abs() < 1e-9, "{d3}");
        }
    }

    #[test]
    fn minimizing_state_minimizes_value() {
        let (ens, y) = scalar_setup();
        let qp = DiscreteEnergyQp::new(&ens.members()[0], &ens, &y, 1.0, 25).unwrap();
        let xs = qp.minimizing_state(25).unwrap();
        let v0 = qp.value(25, &xs).unwrap();
        for d in [-1e-3, 1e-3] {
            assert!(qp.value(25, &(&xs + DVector::from_element(1, d))).unwrap() > v0);
        }
    }

    #[test]
    fn dense_grid_single_quadratic() {
        let target = DVector::from_row_slice(&[0.33, -0.71]);
        let f = |x: &DVector<f64>| (x - &target).norm_squared();
        let res = dense_grid_minimize(f, &DVector::zeros(2), &[1.0, 1.0], 200).unwrap();
        assert!((res.x[0] - target[0]).abs() <= res.cell[0]);
        assert!((res.x[1] - target[1]).abs() <= res.cell[1]);
    }

    #[test]
    fn dense_grid_symmetric_max() {
        let f = |x: &DVector<f64>| ((x[0] - 1.0).powi(2)).max((x[0] + 1.0).powi(2));
        let res = dense_grid_minimize(f, &DVector::from_element(1, 0.3), &[2.0], 401).unwrap();
        assert!(res.x[0].abs() <= res.cell[0]);
    }

    #[test]
    fn dense_grid_enlarges_then_gives_up() {
        let f = |x: &DVector<f64>| (x[0] - 1.5).powi(2);
        // 1.5 lies outside the box of radius 1 but inside the doubled one.
        let res = dense_grid_minimize(f, &DVector::zeros(1), &[1.0], 100).unwrap();
        assert!((res.x[0] - 1.5).abs() <= res.cell[0]);
        let far = |x: &DVector<f64>| (x[0] - 10.0).powi(2);
        assert_eq!(dense_grid_minimize(far, &DVector::zeros(1), &[1.0], 100), Err(Error::BoxExclusion));
        let three = DVector::zeros(3);
        assert!(dense_grid_minimize(|_| 0.0, &three, &[1.0; 3], 10).is_err());
    }

    #[test]
    fn gradient_of_squared_norm() {
        let x = DVector::from_row_slice(&[0.5, -2.0, 3.0]);
        let est = gradient(|z| z.norm_squared(), &x).unwrap();
        assert!((est.value - &x * 2.0).amax() < 1e-8);
    }

    #[test]
    fn gauge_is_second_order() {
        // A cubic at the origin has no roundoff and a pure h^2 truncation error.
        let f = |z: &DVector<f64>| DVector::from_element(1, 1e6 * z[0].powi(3));
        let x = DVector::zeros(1);
        let d1 = central_columns(&f, &x, 1.0).unwrap();
        let d2 = central_columns(&f, &x, 0.5).unwrap();
        let d4 = central_columns(&f, &x, 0.25).unwrap();
        let ratio = (&d1 - &d2).amax() / (&d2 - &d4).amax();
        assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn jacobian_of_linear_map() {
        let a = dmatrix![1.0, 2.0; -3.0, 0.5; 0.0, 4.0];
        let est = jacobian(|z| &a * z, &DVector::from_row_slice(&[1.0, 1.0])).unwrap();
        assert!((est.value - &a).amax() < 1e-9);
    }

    #[test]
    fn non_finite_values_are_errors() {
        assert!(gradient(|z| 1.0 / z[0] - 1.0 / z[0] + f64::NAN, &DVector::from_element(1, 1.0)).is_err());
    }
}
