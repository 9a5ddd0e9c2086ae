//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity violated its domain (negative flow, zero divisor, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Vector/matrix shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The implicit integrator failed to converge.
    #[error("integration failed at step {step}: residual {residual:.3e} after {iterations} Newton iterations")]
    Integration {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    /// A simulated state left the physical guard region.
    #[error("state diverged: {0}")]
    DivergedState(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// The QP solver hit its iteration cap without meeting tolerances.
    #[error("QP solver did not converge: primal residual {primal:.3e}, dual residual {dual:.3e}")]
    QpMaxIterations { primal: f64, dual: f64 },

    /// Hard infeasibility of the control problem (box/output constraints alone).
    #[error("control problem infeasible: {0}")]
    ControlInfeasible(String),

    /// Malformed container, checkpoint, or log file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
