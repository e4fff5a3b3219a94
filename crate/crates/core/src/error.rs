use curlcurl_linalg::LinalgError;
use thiserror::Error;

/// Errors of the geometry layer: charts, profiles and domain files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {point:?} lies outside chart {chart}")]
    PointOutsideChart { chart: usize, point: [f64; 3] },
    #[error("Hessian undefined for profile '{profile}' at {at:?}")]
    HessianUndefined { profile: String, at: [f64; 2] },
    #[error("derivatives of order {order} are not available for profile '{profile}'")]
    DerivativeUnavailable { profile: String, order: usize },
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Errors of the Piola transform layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PiolaError {
    #[error("invalid Piola parameters: {0}")]
    InvalidParameters(String),
    #[error("point lies outside the subgraph of chart {chart}")]
    OutOfSubgraph { chart: usize },
    #[error("field '{0}' does not carry a zero tangential trace")]
    TangentialTraceMissing(String),
    #[error("Jacobian determinant {det:.3e} is too close to zero")]
    DetNearZero { det: f64 },
    #[error("degenerate quadrature: {0}")]
    QuadratureDegenerate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors of mesh generation and mesh queries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("inverted element {tet} (signed volume {volume:.3e})")]
    InvertedElement { tet: usize, volume: f64 },
    #[error("non-manifold boundary: {0}")]
    NonManifold(String),
    #[error("profile must stay above z_lo + margin; got {value} at {at:?}")]
    ProfileTooLow { value: f64, at: [f64; 2] },
    #[error("point location failed for {count} points")]
    PointLocation { count: usize },
}

/// Errors of the finite-element layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("unsupported element order {0}")]
    UnsupportedOrder(usize),
    #[error("penalty weight must be positive, got {0}")]
    InvalidTau(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Errors of the Gaffney and Maz'ya quantities.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaffneyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("quadrature did not converge: refinements gave {coarse:.6e} and {fine:.6e}")]
    QuadratureNonconvergent { coarse: f64, fine: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Errors of the experiment harness; each wraps the failing layer.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Piola(#[from] PiolaError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Gaffney(#[from] GaffneyError),
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("invalid harness input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
