use thiserror::Error;

/// Errors raised anywhere in the discretization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("closest point iteration did not converge at {point:?} after {iterations} iterations")]
    NonConvergence { point: [f64; 3], iterations: usize },

    #[error(
        "point {point:?} is outside the tubular neighborhood (|d| = {distance:.3e} > {width:.3e})"
    )]
    OutsideTube {
        point: [f64; 3],
        distance: f64,
        width: f64,
    },

    #[error("unsupported degree {degree} for {what}")]
    UnsupportedDegree { what: &'static str, degree: usize },

    #[error("element {element} is degenerate (metric determinant {value:.3e})")]
    DegenerateElement { element: usize, value: f64 },

    #[error("area factor is not positive on element {element} ({value:.3e})")]
    NonPositiveJacobian { element: usize, value: f64 },

    #[error("discrete and exact normals are nearly orthogonal on element {element} (alignment {alignment:.3})")]
    SingularFactor { element: usize, alignment: f64 },

    #[error("node transfer between nearly flipped tangent planes (alignment {alignment:.3})")]
    NearTangentPlaneFlip { alignment: f64 },

    #[error("finite-difference step {step:.3e} is dominated by cancellation")]
    StepTooSmall { step: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("solver did not reach the residual target (relative residual {residual:.3e})")]
    SolverDivergence { residual: f64 },

    #[error("eigensolve failed: {0}")]
    EigensolveFailure(String),

    #[error("need at least {needed} records with distinct mesh sizes, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid surface description: {0}")]
    InvalidSurface(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
