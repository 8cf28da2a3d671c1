use thiserror::Error;

/// Errors raised by the discretization, solvers and drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mismatched function spaces: {0}")]
    SpaceMismatch(String),

    #[error("boundary data violates the zero-flux condition: measured flux {flux:.3e}")]
    FluxViolation { flux: f64 },

    #[error("interpolation function returned a negative value {value} at phi = {phi}")]
    NegativeAlpha { value: f64, phi: f64 },

    #[error("phase field value {value} lies outside [-1, 1] where the potential is infinite")]
    PotentialOutOfRange { value: f64 },

    #[error("nonlinear solver did not converge after {iterations} iterations (last residual {last:.3e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("singular linear system ({detail}); uniqueness margin {margin:?}")]
    Singular { detail: String, margin: Option<f64> },

    #[error("U^phi empty: masked velocity DOF {dof} carries nonzero boundary data")]
    EmptyAdmissibleSpace { dof: usize },

    #[error("line search stalled after {halvings} step halvings (tau = {tau:.3e}, J = {objective:.6e})")]
    Stalled {
        halvings: usize,
        tau: f64,
        objective: f64,
    },

    #[error("inadmissible design velocity: {0}")]
    InadmissibleVelocity(String),

    #[error("transport flow left the domain by {distance:.3e} at node {node}")]
    FlowLeftDomain { node: usize, distance: f64 },

    #[error("interface width pi*eps = {width:.4} is resolved by fewer than {min_cells} cells (h = {h:.4})")]
    UnresolvedInterface {
        width: f64,
        h: f64,
        min_cells: usize,
    },

    #[error("uniqueness margin {margin:.4} >= 1: linearized operator is not certified")]
    MarginTooLarge { margin: f64 },

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
