//! Null-controllability laboratory for coupled parabolic-transport systems
//!
//! ```text
//! d/dt f - B f'' + A f' + K f = M u 1_omega      on the torus, B = diag(0, D)
//! ```
//!
//! Each Fourier mode evolves independently under `n^2 E(i/n)` with the
//! symbol `E(z) = B + zA - z^2 K`. The crate computes the branch splitting of
//! that symbol, simulates the system exactly per mode, builds obstruction
//! witnesses for short times and synthesizes controls for long ones.

pub mod algebra;
pub mod analysis;
pub mod control;
pub mod dynamics;
pub mod harness;
pub mod numerics;
pub mod obstruction;
pub mod spectral;

pub use algebra::{
    cascade_transform, kalman_rank, minimal_time, validate_system, CascadeForm, KalmanReport,
    SystemMatrices, TorusSubset, ValidationReport,
};
pub use control::{ControlPiece, ControlSignal};
pub use dynamics::{FourierState, Trajectory};
pub use numerics::{CMat, CVec, C};
pub use spectral::{BranchConstants, BranchTable, SpectralBranch};

/// Errors surfaced by every module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent dimensions or malformed structure.
    #[error("structural error: {0}")]
    Structural(String),
    /// Input outside the domain where the operation is meaningful.
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Quadrature or grid did not resolve the quantity.
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("Gram matrix numerically singular (condition {cond:.3e}): {hint}")]
    GramSingular { cond: f64, hint: String },
    #[error("parse error in `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        field: String,
        line: Option<usize>,
        message: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Precondition(_) | Error::GramSingular { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn context(self, ctx: &str) -> Self {
        match self {
            Error::Structural(m) => Error::Structural(format!("{ctx}: {m}")),
            Error::Precondition(m) => Error::Precondition(format!("{ctx}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::Resolution(m) => Error::Resolution(format!("{ctx}: {m}")),
            Error::GramSingular { cond, hint } => Error::GramSingular {
                cond,
                hint: format!("{ctx}: {hint}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
