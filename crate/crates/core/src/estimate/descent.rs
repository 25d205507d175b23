//! Gradient descent with Barzilai-Borwein step lengths and Armijo backtracking.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::EnergySnapshot;

/// Secant formula used for the step length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BbVariant {
    /// `s^T s / s^T y`
    #[default]
    Bb1,
    /// `s^T y / y^T y`
    Bb2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DescentConfig {
    /// Stop once `|grad| <= grad_tol * (1 + |x|)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    /// Step reduction factor per backtracking trial.
    pub armijo_shrink: f64,
    pub bb_variant: BbVariant,
    /// Step used on the first iteration and whenever the secant curvature is not positive.
    pub init_step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            grad_tol: 1e-9,
            max_iters: 500,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            bb_variant: BbVariant::Bb1,
            init_step: 1.0,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_tol > 0.0
            && self.max_iters > 0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.armijo_shrink > 0.0
            && self.armijo_shrink < 1.0
            && self.init_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("descent configuration out of range".into()))
        }
    }
}

/// Maximum number of step reductions in one line search.
pub const MAX_SHRINKS: usize = 60;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;
const FLOOR_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn tolerance(cfg: &DescentConfig, x: &DVector<f64>) -> f64 {
    cfg.grad_tol * (1.0 + linalg::norm(x))
}

/// Minimizes a smooth function given by `eval(x) = (f(x), grad f(x))`.
///
/// Returns the last iterate flagged `converged = false` when `max_iters` is
/// exhausted. A line search that cannot satisfy the Armijo test within
/// [`MAX_SHRINKS`] reductions is an error.
pub fn minimize<F>(eval: F, x0: &DVector<f64>, cfg: &DescentConfig) -> Result<DescentOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    minimize_scaled(eval, x0, None, cfg)
}

/// As [`minimize`], with steps and secant lengths measured in the inner
/// product of the SPD matrix `metric` (search direction `-metric^-1 grad`).
///
/// Besides the gradient test, the iteration also stops when the scaled step
/// `metric^-1 grad` no longer changes `x` in floating point: the point is
/// then resolved to machine precision and the gradient is at its roundoff
/// floor.
pub fn minimize_scaled<F>(
    eval: F,
    x0: &DVector<f64>,
    metric: Option<&DMatrix<f64>>,
    cfg: &DescentConfig,
) -> Result<DescentOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let chol = match metric {
        Some(m) => Some(m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?),
        None => None,
    };
    minimize_variable(eval, x0, |_| chol.clone(), |_, f| f.abs(), |_| 0.0, cfg)
}

/// Descent in a metric that may change with the iterate.
///
/// `metric(x)` returns the Cholesky factor of the metric at `x`, or `None`
/// for the Euclidean one. `magnitude(x, f)` bounds the terms summed into
/// `f(x)`, so that `eps * magnitude` is the resolution of the computed value.
/// The iteration also stops once the gradient norm is within a small factor
/// of `grad_floor(x)`, its rounding level.
fn minimize_variable<F, M, R, G>(
    mut eval: F,
    x0: &DVector<f64>,
    mut metric: M,
    mut magnitude: R,
    mut grad_floor: G,
    cfg: &DescentConfig,
) -> Result<DescentOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    M: FnMut(&DVector<f64>) -> Option<Cholesky<f64, Dyn>>,
    R: FnMut(&DVector<f64>, f64) -> f64,
    G: FnMut(&DVector<f64>) -> f64,
{
    cfg.validate()?;
    let precondition = |chol: &Option<Cholesky<f64, Dyn>>, g: &DVector<f64>| match chol {
        Some(c) => c.solve(g),
        None => g.clone(),
    };
    let apply = |chol: &Option<Cholesky<f64, Dyn>>, v: &DVector<f64>| match chol {
        Some(c) => {
            let l = c.l_dirty().lower_triangle();
            let w = l.transpose() * v;
            w.dot(&w)
        }
        None => v.dot(v),
    };

    let mut x = x0.clone();
    let (mut f, mut g) = eval(&x);
    let mut chol = metric(&x);
    let mut d = precondition(&chol, &g);
    let mut gnorm = linalg::norm(&g);
    let mut step = cfg.init_step;
    let mut iterations = 0;

    while gnorm > tolerance(cfg, &x) && !resolved(&d, &x) && gnorm > FLOOR_FACTOR * grad_floor(&x) {
        if iterations == cfg.max_iters {
            return Ok(DescentOutcome {
                x,
                value: f,
                grad_norm: gnorm,
                iterations,
                converged: false,
            });
        }
        iterations += 1;

        let gd = g.dot(&d);
        // Decreases below the resolution of f are accepted; otherwise the
        // search stalls once the predicted decrease drops under the
        // rounding error of f.
        let slack = 8.0 * f64::EPSILON * magnitude(&x, f).max(f.abs());
        let mut alpha = step;
        let mut shrinks = 0;
        let (x_new, f_new, g_new) = loop {
            let trial = &x - &d * alpha;
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f - cfg.armijo_c * alpha * gd + slack {
                break (trial, ft, gt);
            }
            shrinks += 1;
            if shrinks > MAX_SHRINKS {
                return Err(Error::LineSearch { shrinks: MAX_SHRINKS });
            }
            alpha *= cfg.armijo_shrink;
        };

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        let chol_new = metric(&x_new);
        // A switch between metrics invalidates the secant scale.
        let same_kind = chol.is_some() == chol_new.is_some();
        chol = chol_new;
        step = if sy > 0.0 && same_kind {
            match cfg.bb_variant {
                BbVariant::Bb1 => apply(&chol, &s) / sy,
                BbVariant::Bb2 => sy / yv.dot(&precondition(&chol, &yv)),
            }
        } else {
            cfg.init_step
        };
        step = step.clamp(STEP_MIN, STEP_MAX);

        x = x_new;
        f = f_new;
        g = g_new;
        d = precondition(&chol, &g);
        gnorm = linalg::norm(&g);
    }

    Ok(DescentOutcome {
        x,
        value: f,
        grad_norm: gnorm,
        iterations,
        converged: true,
    })
}

/// Entropic objective of `snapshot`, with steps measured in the metric of
/// its Hessian at the current iterate (Euclidean steps wherever the Hessian
/// is not numerically SPD).
pub fn minimize_entropic(snapshot: &EnergySnapshot, theta: f64, x0: &DVector<f64>, cfg: &DescentConfig) -> Result<DescentOutcome> {
    minimize_variable(
        |x| snapshot.entropic_value_and_gradient(theta, x),
        x0,
        |x| snapshot.entropic_hessian(theta, x).cholesky(),
        |x, _| snapshot.energy_magnitude(x),
        |x| snapshot.entropic_gradient_resolution(theta, x),
        cfg,
    )
}

/// True when the full step `x - d` rounds back to `x`.
fn resolved(d: &DVector<f64>, x: &DVector<f64>) -> bool {
    x.iter().zip(d.iter()).all(|(xi, di)| xi - di == *xi)
}
