//! Finite-element laboratory for the penalized curl-curl eigenproblem on
//! atlas-described domains.

pub mod atlas;
pub mod error;
pub mod fem;
pub mod gaffney;
pub mod harness;
pub mod mesh;
pub mod modes;
pub mod parallel;
pub mod piola;
pub mod quadrature;

pub use curlcurl_linalg as linalg;
