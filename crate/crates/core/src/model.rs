//! Domain types: validated SPD matrices, parameter tuples, ensembles, time
//! grids and piecewise-linear signals.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg;

/// Default symmetry tolerance applied when parameter matrices are validated.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive definite matrix.
///
/// Construction goes through [`spd_check`], which symmetrizes small
/// asymmetries away and rejects anything whose Cholesky factorization fails.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        spd_check(m, SYMMETRY_TOL)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    /// `s * I`; `s` must be positive.
    pub fn scaled_identity(n: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        // Cholesky succeeded at construction.
        linalg::spd_inverse(&self.0).expect("validated SPD matrix")
    }

    /// Lower-triangular Cholesky factor `L` with `L L^T = self`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.0.clone().cholesky().expect("validated SPD matrix").l()
    }
}

/// Validates `m` as symmetric positive definite.
///
/// Asymmetry strictly below `tol` is removed by averaging with the transpose.
pub fn spd_check(mut m: DMatrix<f64>, tol: f64) -> Result<SpdMatrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if !linalg::all_finite(m.as_slice()) {
        return Err(Error::NotPositiveDefinite);
    }
    let asym = linalg::asymmetry(&m);
    if asym >= tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tol,
        });
    }
    linalg::symmetrize(&mut m);
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(SpdMatrix(m))
}

/// One family member `(A, Gamma, R, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTuple {
    pub a: DMatrix<f64>,
    pub gamma: SpdMatrix,
    pub r: SpdMatrix,
    pub q: SpdMatrix,
}

impl ParamTuple {
    pub fn new(a: DMatrix<f64>, gamma: SpdMatrix, r: SpdMatrix, q: SpdMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if gamma.dim() != a.nrows() {
            return Err(Error::Dimension(format!(
                "Gamma is {}x{} but A is {}x{}",
                gamma.dim(),
                gamma.dim(),
                a.nrows(),
                a.nrows()
            )));
        }
        Ok(ParamTuple { a, gamma, r, q })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.r.dim(), self.q.dim())
    }
}

/// `|| S_a - S_b ||_p` with Frobenius norms on the four blocks.
pub fn tuple_norm(a: &ParamTuple, b: &ParamTuple, p: u32) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidParameter("tuple norm exponent must be >= 1".into()));
    }
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "tuple dimensions {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let blocks = [
        (&a.a - &b.a).norm(),
        (a.gamma.as_matrix() - b.gamma.as_matrix()).norm(),
        (a.r.as_matrix() - b.r.as_matrix()).norm(),
        (a.q.as_matrix() - b.q.as_matrix()).norm(),
    ];
    if p == 1 {
        return Ok(blocks.iter().sum());
    }
    let p = p as f64;
    Ok(blocks.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Known deterministic input added to the state equation.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Forcing {
    #[default]
    Zero,
    Constant(DVector<f64>),
    Sampled(Signal),
}

impl Forcing {
    /// Adds the forcing at time `t` to `out`.
    pub fn add_to(&self, t: f64, out: &mut DVector<f64>) -> Result<()> {
        match self {
            Forcing::Zero => {}
            Forcing::Constant(f) => *out += f,
            Forcing::Sampled(s) => *out += s.eval(t)?,
        }
        Ok(())
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Forcing::Zero => None,
            Forcing::Constant(f) => Some(f.len()),
            Forcing::Sampled(s) => Some(s.dim()),
        }
    }
}

/// `N` parameter tuples sharing `B`, `C`, `x0` and the forcing. Members carry
/// uniform weight `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<ParamTuple>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    x0: DVector<f64>,
    forcing: Forcing,
}

impl Ensemble {
    pub fn new(
        members: Vec<ParamTuple>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        x0: DVector<f64>,
        forcing: Forcing,
    ) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble members"))?;
        let (n, m, r) = first.dims();
        for (k, member) in members.iter().enumerate() {
            if member.dims() != (n, m, r) {
                return Err(Error::Dimension(format!(
                    "member {k} has dimensions {:?}, expected {:?}",
                    member.dims(),
                    (n, m, r)
                )));
            }
        }
        if b.shape() != (n, m) {
            return Err(Error::Dimension(format!("B is {:?}, expected {:?}", b.shape(), (n, m))));
        }
        if c.shape() != (r, n) {
            return Err(Error::Dimension(format!("C is {:?}, expected {:?}", c.shape(), (r, n))));
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
        }
        if let Some(d) = forcing.dim() {
            if d != n {
                return Err(Error::Dimension(format!("forcing has dimension {d}, expected {n}")));
            }
        }
        Ok(Ensemble {
            members,
            b,
            c,
            x0,
            forcing,
        })
    }

    pub fn members(&self) -> &[ParamTuple] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    /// Disturbance dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension `r`.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Same shared data, different member list.
    pub fn with_members(&self, members: Vec<ParamTuple>) -> Result<Self> {
        Ensemble::new(
            members,
            self.b.clone(),
            self.c.clone(),
            self.x0.clone(),
            self.forcing.clone(),
        )
    }
}

/// Equidistant grid `0 = t_0 < ... < t_M = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawGrid"))]
pub struct TimeGrid {
    t_end: f64,
    num_intervals: usize,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_end: f64,
    num_intervals: usize,
}

#[cfg(feature = "serde")]
impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.t_end, raw.num_intervals)
    }
}

impl TimeGrid {
    pub fn new(t_end: f64, num_intervals: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("grid end time {t_end} must be positive")));
        }
        if num_intervals == 0 {
            return Err(Error::InvalidParameter("grid needs at least one interval".into()));
        }
        Ok(TimeGrid {
            t_end,
            num_intervals,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    /// Number of grid points, `M + 1`.
    pub fn len(&self) -> usize {
        self.num_intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.num_intervals as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.num_intervals {
            self.t_end
        } else {
            self.t_end * k as f64 / self.num_intervals as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.time(k))
    }

    /// Grid index of `t`, accepting a relative deviation of `1e-9` of the step.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.check_range(t)?;
        let pos = t / self.dt();
        let k = pos.round();
        if (pos - k).abs() > 1e-9 {
            return Err(Error::OffGrid { t });
        }
        Ok(k as usize)
    }

    /// Interval index `k` and fraction `s in [0, 1]` with `t = (1 - s) t_k + s t_{k+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        self.check_range(t)?;
        let pos = t / self.dt();
        let k = (pos.floor() as usize).min(self.num_intervals - 1);
        let s = (pos - k as f64).clamp(0.0, 1.0);
        Ok((k, s))
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.t_end;
        if !(t >= -slack && t <= self.t_end + slack) {
            return Err(Error::OutOfRange {
                t,
                t_end: self.t_end,
            });
        }
        Ok(())
    }
}

/// Vector-valued function given by its grid values and linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
}

impl Signal {
    pub fn new(grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "signal has {} samples, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::Dimension("signal samples differ in dimension".into()));
        }
        Ok(Signal { grid, values })
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.times().map(&mut f).collect();
        Signal::new(grid, values)
    }

    pub fn constant(grid: TimeGrid, value: DVector<f64>) -> Self {
        Signal {
            grid,
            values: alloc::vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn at_index(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let (k, s) = self.grid.locate(t)?;
        if s == 0.0 {
            return Ok(self.values[k].clone());
        }
        if s == 1.0 {
            return Ok(self.values[k + 1].clone());
        }
        Ok(&self.values[k] * (1.0 - s) + &self.values[k + 1] * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar_tuple(a: f64, g: f64, r: f64, q: f64) -> ParamTuple {
        // Blocks of the metric test may be zero, so bypass SPD validation.
        ParamTuple {
            a: DMatrix::from_element(1, 1, a),
            gamma: SpdMatrix(DMatrix::from_element(1, 1, g)),
            r: SpdMatrix(DMatrix::from_element(1, 1, r)),
            q: SpdMatrix(DMatrix::from_element(1, 1, q)),
        }
    }

    fn tuple2(vals: &[f64]) -> ParamTuple {
        let m = |o: usize| DMatrix::from_row_slice(2, 2, &vals[o..o + 4]);
        ParamTuple {
            a: m(0),
            gamma: SpdMatrix(m(4)),
            r: SpdMatrix(m(8)),
            q: SpdMatrix(m(12)),
        }
    }

    #[test]
    fn tuple_norm_identical_is_zero() {
        let t = scalar_tuple(1.0, 2.0, 1.0, 3.0);
        assert_eq!(tuple_norm(&t, &t, 1).unwrap(), 0.0);
        assert_eq!(tuple_norm(&t, &t, 3).unwrap(), 0.0);
    }

    #[test]
    fn tuple_norm_scalar_blocks() {
        let a = scalar_tuple(1.0, 2.0, 1.0, 3.0);
        let b = scalar_tuple(0.0, 0.0, 0.0, 0.0);
        assert_eq!(tuple_norm(&a, &b, 1).unwrap(), 7.0);
    }

    #[test]
    fn tuple_norm_rejects_mismatch() {
        let a = scalar_tuple(1.0, 1.0, 1.0, 1.0);
        let b = tuple2(&[0.0; 16]);
        assert!(matches!(tuple_norm(&a, &b, 1), Err(Error::Dimension(_))));
        assert!(tuple_norm(&a, &a, 0).is_err());
    }

    proptest! {
        #[test]
        fn tuple_norm_p1_is_sum_of_frobenius(v in prop::collection::vec(-5.0f64..5.0, 32)) {
            let a = tuple2(&v[..16]);
            let b = tuple2(&v[16..]);
            // Elementwise Frobenius norms, block by block.
            let mut expected = 0.0;
            for blk in 0..4 {
                let s: f64 = (0..4).map(|i| (v[4 * blk + i] - v[16 + 4 * blk + i]).powi(2)).sum();
                expected += s.sqrt();
            }
            let got = tuple_norm(&a, &b, 1).unwrap();
            prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected));
        }

        #[test]
        fn tuple_norm_is_a_metric(
            v in prop::collection::vec(-5.0f64..5.0, 48),
            p in 1u32..4,
        ) {
            let a = tuple2(&v[..16]);
            let b = tuple2(&v[16..32]);
            let c = tuple2(&v[32..]);
            let ab = tuple_norm(&a, &b, p).unwrap();
            let ba = tuple_norm(&b, &a, p).unwrap();
            let bc = tuple_norm(&b, &c, p).unwrap();
            let ac = tuple_norm(&a, &c, p).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
            prop_assert!(ac <= ab + bc + 1e-12 * (1.0 + ac));
            prop_assert!(tuple_norm(&a, &a, p).unwrap() <= 1e-12);
        }

        #[test]
        fn signal_is_linear_on_each_interval(
            vals in prop::collection::vec(-10.0f64..10.0, 6),
            s in 0.0f64..1.0,
        ) {
            let grid = TimeGrid::new(2.5, 5).unwrap();
            let sig = Signal::new(grid, vals.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap();
            for k in 0..5 {
                let t0 = grid.time(k);
                let t1 = grid.time(k + 1);
                prop_assert_eq!(sig.eval(t0).unwrap()[0], vals[k]);
                // Three collinear samples inside the interval.
                let ts = [t0 + 0.25 * s * (t1 - t0), t0 + 0.5 * s * (t1 - t0), t0 + s * (t1 - t0)];
                let ys: Vec<f64> = ts.iter().map(|&t| sig.eval(t).unwrap()[0]).collect();
                let slope = (vals[k + 1] - vals[k]) / (t1 - t0);
                for (t, y) in ts.iter().zip(&ys) {
                    let expect = vals[k] + slope * (t - t0);
                    prop_assert!((y - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
                }
            }
        }
    }

    #[test]
    fn signal_eval_contract() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let sig = Signal::from_fn(grid, |t| DVector::from_vec(vec![t * t, 1.0])).unwrap();
        assert_eq!(sig.eval(0.5).unwrap()[0], 0.25);
        // Midpoint of [0.25, 0.5] is the mean of neighbours.
        let mid = sig.eval(0.375).unwrap();
        assert!((mid[0] - 0.5 * (0.0625 + 0.25)).abs() < 1e-15);
        assert_eq!(mid[1], 1.0);
        assert!(matches!(sig.eval(1.5), Err(Error::OutOfRange { .. })));
        assert!(sig.eval(-0.1).is_err());

        let c = Signal::constant(grid, DVector::from_vec(vec![3.0, -1.0]));
        for t in [0.0, 0.1, 0.77, 1.0] {
            assert_eq!(c.eval(t).unwrap(), DVector::from_vec(vec![3.0, -1.0]));
        }
    }

    #[test]
    fn grid_indexing() {
        let grid = TimeGrid::new(5.0, 1000).unwrap();
        assert_eq!(grid.len(), 1001);
        assert_eq!(grid.time(1000), 5.0);
        assert_eq!(grid.index_of(2.5).unwrap(), 500);
        assert!(matches!(grid.index_of(2.5011), Err(Error::OffGrid { .. })));
        for k in 0..1000 {
            let dt = grid.time(k + 1) - grid.time(k);
            assert!((dt - grid.dt()).abs() <= 1e-12 * 5.0);
        }
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn spd_check_cases() {
        let id = spd_check(DMatrix::identity(3, 3), 1e-12).unwrap();
        assert_eq!(id.as_matrix(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(
            spd_check(dmatrix![1.0, 2.0; 2.0, 1.0], 1e-12),
            Err(Error::NotPositiveDefinite)
        );
        assert!(spd_check(dmatrix![2.0, 1.0; 1.0, 2.0], 1e-12).is_ok());
        assert!(matches!(
            spd_check(dmatrix![2.0, 1.0; 1.1, 2.0], 1e-12),
            Err(Error::NotSymmetric { .. })
        ));
        let nearly = spd_check(dmatrix![2.0, 1.0; 1.0 + 1e-14, 2.0], 1e-12).unwrap();
        assert_eq!(linalg::asymmetry(nearly.as_matrix()), 0.0);
        assert!(spd_check(DMatrix::zeros(2, 3), 1e-12).is_err());
    }

    #[test]
    fn ensemble_validation() {
        let member = ParamTuple::new(
            dmatrix![0.0, 1.0; -1.0, -1.0],
            SpdMatrix::scaled_identity(2, 0.1).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
        )
        .unwrap();
        let b = dmatrix![0.0; 1.0];
        let c = dmatrix![1.0, 0.0];
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let ens = Ensemble::new(vec![member.clone()], b.clone(), c.clone(), x0.clone(), Forcing::Zero).unwrap();
        assert_eq!((ens.state_dim(), ens.input_dim(), ens.output_dim()), (2, 1, 1));
        assert!(Ensemble::new(vec![], b.clone(), c.clone(), x0.clone(), Forcing::Zero).is_err());
        assert!(Ensemble::new(vec![member.clone()], c.clone(), c.clone(), x0.clone(), Forcing::Zero).is_err());
        assert!(Ensemble::new(
            vec![member],
            b,
            c,
            x0,
            Forcing::Constant(DVector::zeros(3))
        )
        .is_err());
    }
}
