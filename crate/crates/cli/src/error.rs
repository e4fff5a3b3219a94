//! CLI errors and their exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 2 | configuration: config file, domain file, invalid parameters, usage |
//! | 3 | mesh and geometry: meshing, finite-element setup, Piola mapping |
//! | 4 | solver: eigensolver, factorization, quadrature nonconvergence |
//! | 5 | io: reading inputs other than configs, writing outputs |

use std::path::PathBuf;

use curlcurl::error::{FemError, GaffneyError, GeometryError, HarnessError, MeshError, PiolaError};
use curlcurl::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub const CONFIG_EXIT: i32 = 2;
    pub const MESH_EXIT: i32 = 3;
    pub const SOLVER_EXIT: i32 = 4;
    pub const IO_EXIT: i32 = 5;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => Self::CONFIG_EXIT,
            CliError::Mesh(_) => Self::MESH_EXIT,
            CliError::Solver(_) => Self::SOLVER_EXIT,
            CliError::Io { .. } => Self::IO_EXIT,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Parse { line, message } => CliError::Config {
                line: (line > 0).then_some(line),
                message: format!("domain file: {message}"),
            },
            GeometryError::PointOutsideChart { .. } | GeometryError::HessianUndefined { .. } => {
                CliError::Mesh(e.to_string())
            }
            GeometryError::DerivativeUnavailable { .. }
            | GeometryError::InvalidAtlas(_)
            | GeometryError::InvalidProfile(_) => CliError::config(e.to_string()),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Mesh(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<FemError> for CliError {
    fn from(e: FemError) -> Self {
        match e {
            FemError::UnsupportedOrder(_) | FemError::InvalidTau(_) => CliError::config(e.to_string()),
            FemError::Mesh(m) => m.into(),
            FemError::Linalg(l) => l.into(),
        }
    }
}

impl From<PiolaError> for CliError {
    fn from(e: PiolaError) -> Self {
        match e {
            PiolaError::InvalidParameters(_) | PiolaError::TangentialTraceMissing(_) => {
                CliError::config(e.to_string())
            }
            PiolaError::Geometry(g) => g.into(),
            PiolaError::OutOfSubgraph { .. } | PiolaError::DetNearZero { .. } | PiolaError::QuadratureDegenerate(_) => {
                CliError::Mesh(e.to_string())
            }
        }
    }
}

impl From<GaffneyError> for CliError {
    fn from(e: GaffneyError) -> Self {
        match e {
            GaffneyError::InvalidInput(_) => CliError::config(e.to_string()),
            GaffneyError::QuadratureNonconvergent { .. } => CliError::Solver(e.to_string()),
            GaffneyError::Fem(f) => f.into(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Geometry(g) => g.into(),
            HarnessError::Piola(p) => p.into(),
            HarnessError::Mesh(m) => m.into(),
            HarnessError::Fem(f) => f.into(),
            HarnessError::Gaffney(g) => g.into(),
            HarnessError::Solver(l) => l.into(),
            HarnessError::InvalidInput(m) => CliError::config(m),
            HarnessError::Io(io) => CliError::io("<harness output>", io),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_maps_to_one_documented_code() {
        let cases: Vec<(CliError, i32)> = vec![
            (GeometryError::Parse { line: 3, message: "x".into() }.into(), 2),
            (GeometryError::InvalidAtlas("x".into()).into(), 2),
            (MeshError::InvertedElement { tet: 1, volume: -1.0 }.into(), 3),
            (FemError::UnsupportedOrder(5).into(), 2),
            (FemError::Mesh(MeshError::DegenerateBox("x".into())).into(), 3),
            (LinalgError::NotPositiveDefinite { pivot: 0 }.into(), 4),
            (FemError::Linalg(LinalgError::InvalidArgument("x".into())).into(), 4),
            (PiolaError::DetNearZero { det: 0.0 }.into(), 3),
            (PiolaError::InvalidParameters("x".into()).into(), 2),
            (GaffneyError::QuadratureNonconvergent { coarse: 1.0, fine: 2.0 }.into(), 4),
            (GaffneyError::InvalidInput("x".into()).into(), 2),
            (HarnessError::InvalidInput("x".into()).into(), 2),
            (HarnessError::Solver(LinalgError::NoConvergence { iterations: 1, converged: 0, wanted: 1 }).into(), 4),
            (CliError::io("f", std::io::Error::other("x")), 5),
        ];
        for (e, code) in cases {
            assert_eq!(e.exit_code(), code, "{e}");
        }
    }

    #[test]
    fn domain_parse_errors_keep_their_line() {
        let e: CliError = GeometryError::Parse { line: 7, message: "bad".into() }.into();
        assert!(matches!(e, CliError::Config { line: Some(7), .. }));
        assert!(e.to_string().contains("line 7"));
    }
}
