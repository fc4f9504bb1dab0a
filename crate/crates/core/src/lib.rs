//! Steady-state analysis of two linear oscillator-cooling controllers.
//!
//! * [`sideband`]: coherent feedback through a damped auxiliary mode
//!   (resolved-sideband cooling), solved exactly as a 4×4 linear network.
//! * [`measfb`]: continuous position measurement with optimal linear
//!   feedback on the conditional momentum, solved through its Riccati and
//!   variance-of-means equations.
//! * [`linsys`]: the shared linear stochastic system machinery (Lyapunov,
//!   spectra, rational spectral integrals, quadrature).
//! * [`trajectory`]: Monte Carlo ensembles of conditional-mean trajectories.
//! * [`compare`]: head-to-head rows and scaling fits.
//! * [`config`] / [`report`]: run configuration, CSV/JSON emission and parsing.
//!
//! All second moments are expressed in the dimensionless quadratures
//! `x = b + b†`, `p = -i(b - b†)`, for which the ground state has unit
//! variance and `n̄ = ⟨x²⟩/4 + ⟨p²⟩/4 - 1/2`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod error;
pub mod linsys;
pub mod measfb;
pub mod optimize;
pub mod oscillator;
pub mod poly;
pub mod quad;
pub mod report;
pub mod sideband;
pub mod trajectory;
pub mod validate;

pub use error::{Error, Result};
pub use oscillator::Oscillator;
pub use report::{CoolingReport, Method, RegimeViolation};
