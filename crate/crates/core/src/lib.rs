//! Ensemble Kalman-Bucy state estimation for linear time-invariant systems
//! whose system matrix and noise weights are only known up to a finite
//! sample of parameters.
//!
//! Every member of an [`Ensemble`](model::Ensemble) runs its own
//! Kalman-Bucy filter. The member value functions
//! `V_k(t, x) = |x - xhat_k(t)|^2_{P_k(t)} + r_k(t)` are then combined into
//! three estimators:
//!
//! * the risk-neutral estimator minimizing the mean energy,
//! * the entropic estimator minimizing `(1/theta) ln mean exp(theta V_k)`,
//! * the worst-case estimator minimizing `max_k V_k`, returned together with
//!   a convex-combination optimality certificate.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! thread pools live in the `riskfilter` companion crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod estimate;
pub mod exec;
pub mod integrate;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod scenario;
pub mod synth;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use nalgebra::{DMatrix, DVector};
