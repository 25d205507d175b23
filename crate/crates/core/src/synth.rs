//! Ground-truth trajectories and disturbed measurements.
//!
//! Random numbers come from ChaCha20 keyed by the 64-bit seed (little-endian
//! in the first eight key bytes, remaining bytes zero). Every purpose has its
//! own stream number, so adding draws to one purpose never shifts another.
//! Uniforms take the top 53 bits of a `u64`; normals use the Box-Muller
//! transform with both outputs consumed in order.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float as _;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::integrate::{rk4_path, IntegratorConfig};
use crate::model::{Ensemble, Signal, SpdMatrix, TimeGrid};

/// Stream numbers of the generator.
pub mod stream {
    /// Initial disturbance.
    pub const ETA: u64 = 0;
    /// Input disturbance at the grid points.
    pub const V: u64 = 1;
    /// Measurement disturbance at the grid points.
    pub const MU: u64 = 2;
    /// Parameter sampling in scenarios.
    pub const SAMPLER: u64 = 3;
}

/// Reproducible standard-normal source.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        GaussianStream { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the logarithm is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn standard_normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.standard_normal()))
    }
}

/// Zero-mean Gaussian vector with covariance `cov`, as `L z` with `L L^T = cov`.
pub fn gaussian_draw(stream: &mut GaussianStream, cov: &SpdMatrix) -> DVector<f64> {
    let z = stream.standard_normal_vector(cov.dim());
    cov.cholesky_factor() * z
}

/// Covariances and seed of the synthetic disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Initial-state covariance.
    pub gamma: SpdMatrix,
    /// Input covariance.
    pub r: SpdMatrix,
    /// Measurement covariance.
    pub q: SpdMatrix,
    /// Member whose system matrix generates the data.
    pub true_member: usize,
    /// Standard deviations are multiplied by `scale.sqrt()`; `0` switches the noise off.
    pub scale: f64,
}

impl NoiseConfig {
    pub fn new(seed: u64, gamma: SpdMatrix, r: SpdMatrix, q: SpdMatrix, true_member: usize) -> Self {
        NoiseConfig {
            seed,
            gamma,
            r,
            q,
            true_member,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_true: Signal,
    pub y: Signal,
    /// Initial disturbance, `x_true(0) = x0 + eta`.
    pub eta: DVector<f64>,
    pub v: Signal,
    pub mu: Signal,
}

/// Samples of `N(0, scale * cov)` at every grid point.
fn noise_signal(grid: TimeGrid, seed: u64, stream_id: u64, cov: &SpdMatrix, scale: f64) -> Result<Signal> {
    let mut stream = GaussianStream::new(seed, stream_id);
    let factor = cov.cholesky_factor() * scale.sqrt();
    let values: Vec<DVector<f64>> = (0..grid.len())
        .map(|_| &factor * stream.standard_normal_vector(cov.dim()))
        .collect();
    Signal::new(grid, values)
}

/// Integrates the true member with interpolated input noise and forms
/// `y(t_k) = C x_true(t_k) + mu(t_k)`.
pub fn synthesize(ens: &Ensemble, grid: &TimeGrid, noise: &NoiseConfig, cfg: &IntegratorConfig) -> Result<GroundTruth> {
    let member = ens
        .members()
        .get(noise.true_member)
        .ok_or_else(|| Error::InvalidParameter(alloc::format!("true member {} out of range", noise.true_member)))?;
    if !(noise.scale >= 0.0 && noise.scale.is_finite()) {
        return Err(Error::InvalidParameter("noise scale must be finite and nonnegative".into()));
    }
    let n = ens.state_dim();
    let dims_ok = noise.gamma.dim() == n && noise.r.dim() == ens.input_dim() && noise.q.dim() == ens.output_dim();
    if !dims_ok {
        return Err(Error::Dimension("noise covariances do not match the ensemble".into()));
    }

    let mut eta_stream = GaussianStream::new(noise.seed, stream::ETA);
    let eta = gaussian_draw(&mut eta_stream, &noise.gamma) * noise.scale.sqrt();
    let v = noise_signal(*grid, noise.seed, stream::V, &noise.r, noise.scale)?;
    let mu = noise_signal(*grid, noise.seed, stream::MU, &noise.q, noise.scale)?;

    let a: &DMatrix<f64> = &member.a;
    let b = ens.b();
    let forcing = ens.forcing();
    let x_init = ens.x0() + &eta;
    let states = rk4_path(
        |t, x| {
            let mut dx = a * x + b * v.eval(t)?;
            forcing.add_to(t, &mut dx)?;
            Ok(dx)
        },
        &x_init,
        grid,
        cfg,
    )?;
    let y_values: Vec<DVector<f64>> = states
        .iter()
        .zip(mu.values())
        .map(|(x, m)| ens.c() * x + m)
        .collect();
    Ok(GroundTruth {
        x_true: Signal::new(*grid, states)?,
        y: Signal::new(*grid, y_values)?,
        eta,
        v,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Forcing, ParamTuple};
    use alloc::vec;
    use nalgebra::dmatrix;

    fn oscillator(c: f64) -> Ensemble {
        let member = ParamTuple::new(
            dmatrix![0.0, 1.0; -1.0, -c],
            SpdMatrix::scaled_identity(2, 0.1).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
        )
        .unwrap();
        Ensemble::new(
            vec![member],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            DVector::from_row_slice(&[1.0, 0.0]),
            Forcing::Zero,
        )
        .unwrap()
    }

    fn noise(seed: u64) -> NoiseConfig {
        NoiseConfig::new(
            seed,
            SpdMatrix::scaled_identity(2, 0.1).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
            SpdMatrix::scaled_identity(1, 0.05).unwrap(),
            0,
        )
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = GaussianStream::new(42, 0);
        let mut b = GaussianStream::new(42, 0);
        let mut c = GaussianStream::new(42, 1);
        let xa: Vec<f64> = (0..10).map(|_| a.standard_normal()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.standard_normal()).collect();
        let xc: Vec<f64> = (0..10).map(|_| c.standard_normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn uniform_range() {
        let mut s = GaussianStream::new(1, 0);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn identity_draw_moments() {
        let mut s = GaussianStream::new(7, 0);
        let cov = SpdMatrix::identity(2);
        let count = 100_000;
        let mut mean = DVector::zeros(2);
        for _ in 0..count {
            mean += gaussian_draw(&mut s, &cov);
        }
        mean /= count as f64;
        // Four standard errors.
        assert!(mean.amax() < 4.0 / (count as f64).sqrt());
    }

    #[test]
    fn scalar_variance() {
        let mut s = GaussianStream::new(9, 0);
        let cov = SpdMatrix::scaled_identity(1, 4.0).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| gaussian_draw(&mut s, &cov)[0]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 4.0).abs() < 0.4);
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let cov = SpdMatrix::new(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let l = cov.cholesky_factor();
        assert!((&l * l.transpose() - cov.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn measurement_identity_is_exact() {
        let ens = oscillator(0.5);
        let grid = TimeGrid::new(5.0, 200).unwrap();
        let gt = synthesize(&ens, &grid, &noise(3), &IntegratorConfig::default()).unwrap();
        for k in 0..grid.len() {
            let expect = ens.c() * gt.x_true.at_index(k) + gt.mu.at_index(k);
            assert_eq!(&expect, gt.y.at_index(k));
        }
        assert_eq!(gt.x_true.at_index(0), &(ens.x0() + &gt.eta));
    }

    #[test]
    fn same_seed_same_truth() {
        let ens = oscillator(0.5);
        let grid = TimeGrid::new(5.0, 100).unwrap();
        let a = synthesize(&ens, &grid, &noise(11), &IntegratorConfig::default()).unwrap();
        let b = synthesize(&ens, &grid, &noise(11), &IntegratorConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&ens, &grid, &noise(12), &IntegratorConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_scale_gives_nominal_trajectory() {
        let ens = oscillator(2.0);
        let grid = TimeGrid::new(5.0, 100).unwrap();
        let gt = synthesize(&ens, &grid, &noise(5).with_scale(0.0), &IntegratorConfig::default()).unwrap();
        assert!(gt.eta.amax() == 0.0);
        assert!(gt.v.values().iter().all(|v| v.amax() == 0.0));
        // Critically damped: x(t) = (1 + t) e^{-t}.
        for k in 0..grid.len() {
            let t = grid.time(k);
            let exact = (1.0 + t) * (-t).exp();
            assert!((gt.y.at_index(k)[0] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn measurement_noise_variance() {
        let ens = oscillator(0.5);
        let grid = TimeGrid::new(5.0, 999).unwrap();
        let gt = synthesize(&ens, &grid, &noise(21), &IntegratorConfig::with_substeps(1)).unwrap();
        let vals: Vec<f64> = gt.mu.values().iter().map(|m| m[0]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((var - 0.05).abs() < 0.2 * 0.05, "variance {var}");
    }

    #[test]
    fn bad_true_member() {
        let ens = oscillator(0.5);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut cfg = noise(1);
        cfg.true_member = 3;
        assert!(synthesize(&ens, &grid, &cfg, &IntegratorConfig::default()).is_err());
    }
}
