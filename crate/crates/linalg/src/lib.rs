//! Sparse symmetric linear algebra for finite-element eigenvalue problems.
//!
//! The crate provides a compressed-row symmetric operator ([`SparseSymOp`]),
//! fill-reducing orderings, a supernodal multifrontal LDLᵀ factorization with
//! inertia counting, and a shift-invert block Lanczos solver for the
//! generalized problem `A x = λ M x`. Dense kernels double as test oracles.

pub mod csr;
pub mod dense;
pub mod eigensolver;
pub mod error;
pub mod ldlt;
pub mod ordering;
pub mod spectrum;

pub use csr::SparseSymOp;
pub use dense::{dense_generalized_eigen, DenseLdlt};
pub use eigensolver::{count_eigenvalues_below, solve_gevp, EigenConfig, FactorKind, ShiftMode};
pub use error::LinalgError;
pub use ldlt::{LdltFactor, SymbolicLdlt};
pub use ordering::Ordering;
pub use spectrum::{cluster_values, Cluster, ModeTag, Spectrum};
