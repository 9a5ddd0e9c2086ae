//! Shipboard post-combustion carbon capture: reduced-order plant simulation,
//! data-driven Koopman surrogate modeling, and convex economic predictive control.
//!
//! The crate is organized around the closed-loop workflow:
//!
//! 1. [`plant`] — reduced-order dynamic simulator of the integrated
//!    ship-engine + capture plant (ground truth for data and evaluation).
//! 2. [`dataset`] — excitation-signal generation, simulation rollouts,
//!    windowing, normalization, and persistence.
//! 3. [`nn`] — minimal differentiable kernel (dense layers, LSTM cell,
//!    reverse-mode gradients, Adam) sized for the fixed surrogate architecture.
//! 4. [`dnko`] — the time-varying Koopman surrogate: history encoder,
//!    observable lifting, matrix heads, linear rollout, and training loop.
//! 5. [`qp`] — dense operator-splitting QP solver with KKT-based termination.
//! 6. [`empc`] — condensed receding-horizon economic controller (hard and
//!    slack-relaxed variants) built on an encoded context.
//! 7. [`baselines`] — PI set-point tracking controller for comparison.
//! 8. [`harness`] — scenario matrix, metrics, comparison tables, and plots.

pub mod baselines;
pub mod container;
pub mod dataset;
pub mod dnko;
pub mod empc;
pub mod error;
pub mod harness;
pub mod nn;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};
