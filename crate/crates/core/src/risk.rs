//! Risk functionals over ensemble energies and the entropic objective
//! `F(x) = (1/theta) ln( (1/N) sum_k exp(theta V_k(x)) )` with its
//! gradient and Hessian.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::kalman::FilterBank;
use crate::linalg;

/// Which functional of the ensemble energy is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskSpec {
    Expectation,
    /// Entropic risk with aversion `theta in (0, inf)`.
    Entropic(f64),
    WorstCase,
}

impl RiskSpec {
    pub fn entropic(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "risk aversion {theta} must lie in (0, inf)"
            )));
        }
        Ok(RiskSpec::Entropic(theta))
    }
}

/// Max-shifted `ln sum_k exp(v_k)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `theta * values`, max-shifted.
pub fn softmax(theta: f64, values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|v| (theta * (v - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Evaluates the risk functional on an energy vector.
pub fn rho(spec: RiskSpec, e: &[f64]) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::Empty("energy vector"));
    }
    Ok(match spec {
        RiskSpec::Expectation => e.iter().sum::<f64>() / e.len() as f64,
        RiskSpec::WorstCase => e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RiskSpec::Entropic(theta) => {
            let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = e.iter().copied().fold(f64::INFINITY, f64::min);
            let n = e.len() as f64;
            if theta * (max - min) <= 1.0 {
                // ln(1 + mean(expm1)) keeps full precision as theta -> 0.
                let mean_m1 = e.iter().map(|v| (theta * (v - max)).exp_m1()).sum::<f64>() / n;
                max + mean_m1.ln_1p() / theta
            } else {
                let mean_exp = e.iter().map(|v| (theta * (v - max)).exp()).sum::<f64>() / n;
                max + mean_exp.ln() / theta
            }
        }
    })
}

/// Result of checking `max + ln(1/N)/theta <= rho_theta <= max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsCheck {
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Checks the entropic-risk sandwich against the maximum, with `1e-12` absolute slack.
pub fn rho_bounds_check(e: &[f64], theta: f64) -> Result<BoundsCheck> {
    let value = rho(RiskSpec::entropic(theta)?, e)?;
    let upper = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = upper + (1.0 / e.len() as f64).ln() / theta;
    Ok(BoundsCheck {
        lower_holds: value >= lower - 1e-12,
        upper_holds: value <= upper + 1e-12,
        value,
        lower,
        upper,
    })
}

/// Precision, filter state and residual energy of one member at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberSlice {
    pub p: DMatrix<f64>,
    pub xhat: DVector<f64>,
    pub r: f64,
}

/// All members at one grid time; the value functions `V_k(x)` are quadratics in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySnapshot {
    members: Vec<MemberSlice>,
}

impl EnergySnapshot {
    pub fn new(members: Vec<MemberSlice>) -> Self {
        EnergySnapshot { members }
    }

    pub fn members(&self) -> &[MemberSlice] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].xhat.len()
    }

    pub fn energy(&self, k: usize, x: &DVector<f64>) -> f64 {
        let m = &self.members[k];
        linalg::quad_form(&m.p, &(x - &m.xhat)) + m.r
    }

    pub fn energies(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.members.len()).map(|k| self.energy(k, x)).collect()
    }

    /// `g_k = P_k (x - xhat_k)`, half the gradient of `V_k`.
    pub fn half_gradients(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.members.iter().map(|m| &m.p * (x - &m.xhat)).collect()
    }

    /// Softmax weights `c_k = exp(theta V_k) / sum_j exp(theta V_j)`.
    pub fn softmax_weights(&self, theta: f64, x: &DVector<f64>) -> Vec<f64> {
        softmax(theta, &self.energies(x))
    }

    pub fn entropic_objective(&self, theta: f64, x: &DVector<f64>) -> f64 {
        let e = self.energies(x);
        rho(RiskSpec::Entropic(theta), &e).expect("snapshot is nonempty")
    }

    /// Objective and gradient in one pass.
    pub fn entropic_value_and_gradient(&self, theta: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let e = self.energies(x);
        let value = rho(RiskSpec::Entropic(theta), &e).expect("snapshot is nonempty");
        let c = softmax(theta, &e);
        let mut g = DVector::zeros(x.len());
        for (m, ck) in self.members.iter().zip(&c) {
            if *ck == 0.0 {
                continue;
            }
            g += (&m.p * (x - &m.xhat)) * (2.0 * ck);
        }
        (value, g)
    }

    /// `2 sum_k c_k P_k (x - xhat_k)`.
    pub fn entropic_gradient(&self, theta: f64, x: &DVector<f64>) -> DVector<f64> {
        self.entropic_value_and_gradient(theta, x).1
    }

    /// `2 sum c_k P_k + 4 theta [ sum c_k g_k g_k^T - (sum c_k g_k)(sum c_k g_k)^T ]`
    /// with `g_k = P_k (x - xhat_k)`.
    pub fn entropic_hessian(&self, theta: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let c = self.softmax_weights(theta, x);
        let mut h = DMatrix::zeros(n, n);
        let mut second = DMatrix::zeros(n, n);
        let mut mean = DVector::zeros(n);
        for (m, ck) in self.members.iter().zip(&c) {
            let g = &m.p * (x - &m.xhat);
            h += &m.p * (2.0 * ck);
            second += &g * g.transpose() * *ck;
            mean += g * *ck;
        }
        h += (second - &mean * mean.transpose()) * (4.0 * theta);
        linalg::symmetrize(&mut h);
        h
    }

    /// Largest magnitude `|x - xhat_k|^T |P_k| |x - xhat_k| + |r_k|` over the
    /// members; the energies, and hence the entropic objective, are only
    /// known to about `eps` times this.
    pub fn energy_magnitude(&self, x: &DVector<f64>) -> f64 {
        self.members
            .iter()
            .map(|m| linalg::quad_form_abs(&m.p, &(x - &m.xhat)) + m.r.abs())
            .fold(0.0, f64::max)
    }

    /// Rounding level of [`entropic_gradient`](Self::entropic_gradient) at `x`.
    ///
    /// Two sources are bounded: the products `P_k (x - xhat_k)` themselves,
    /// and the softmax weights, whose relative error is about
    /// `theta * eps * energy_magnitude`.
    pub fn entropic_gradient_resolution(&self, theta: f64, x: &DVector<f64>) -> f64 {
        let c = self.softmax_weights(theta, x);
        let weight_err = theta * self.energy_magnitude(x);
        let mut total = 0.0;
        for (m, ck) in self.members.iter().zip(&c) {
            if *ck == 0.0 {
                continue;
            }
            let v = x - &m.xhat;
            let product = linalg::norm(&(m.p.abs() * v.abs()));
            let g = linalg::norm(&(&m.p * &v));
            total += ck * (product + weight_err * g);
        }
        2.0 * f64::EPSILON * total
    }

    /// `max_{k,j} V_k(x) - V_j(x)`.
    pub fn energy_spread(&self, x: &DVector<f64>) -> f64 {
        let e = self.energies(x);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Entropic objective at grid index `ti`.
pub fn entropic_objective(bank: &FilterBank, theta: f64, ti: usize, x: &DVector<f64>) -> Result<f64> {
    Ok(bank.snapshot(ti)?.entropic_objective(theta, x))
}

pub fn entropic_gradient(bank: &FilterBank, theta: f64, ti: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(bank.snapshot(ti)?.entropic_gradient(theta, x))
}

pub fn entropic_hessian(bank: &FilterBank, theta: f64, ti: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(bank.snapshot(ti)?.entropic_hessian(theta, x))
}
