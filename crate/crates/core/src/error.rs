use thiserror::Error;

use crate::network::Network;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor is not symmetric (relative asymmetry {0:.3e})")]
    SymmetryViolation(f64),

    #[error("poisson ratio {0} is not in (-1, 0.5): incompressible or unstable")]
    Incompressible(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("invalid network topology: {0}")]
    Topology(String),

    #[error("degenerate interface block (3x3 normal-stiffness block not invertible)")]
    DegenerateInterface,

    #[error("network has zero total weight")]
    EmptyNetwork,

    #[error("phase sampling failed after {0} rejected draws")]
    Sampling(usize),

    #[error("training diverged at epoch {epoch}: cost is not finite")]
    Divergence {
        epoch: usize,
        last_finite: Box<Network>,
    },

    #[error("transfer chain stage {stage}: {reason}")]
    Chain { stage: usize, reason: String },

    #[error("invalid orientation tensor: {0}")]
    InvalidOrientation(String),

    #[error("anchor descriptors are linearly dependent")]
    AnchorDegeneracy,

    #[error("material update failed: {0}")]
    Material(String),

    #[error("network iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("element {element}, quadrature point {qp}: {source}")]
    QuadraturePoint {
        element: usize,
        qp: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("explicit integration blew up at t = {time:.6e} (last stable time {last_stable:.6e})")]
    BlowUp { time: f64, last_stable: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad user input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Singular(_)
            | Error::DegenerateInterface
            | Error::EmptyNetwork
            | Error::Sampling(_)
            | Error::Divergence { .. }
            | Error::AnchorDegeneracy
            | Error::Material(_)
            | Error::NonConvergence { .. }
            | Error::BlowUp { .. } => true,
            Error::QuadraturePoint { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
