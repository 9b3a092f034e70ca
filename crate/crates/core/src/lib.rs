//! Numerical toolkit for planar Sobolev homeomorphisms.
//!
//! The crate evaluates pointwise distortion functionals of analytic planar
//! mappings, integrates them into composition-operator norm bounds, computes
//! discrete conformal moduli of curve families on grid graphs, and estimates
//! Neumann-Laplacian eigenvalue lower bounds on Hölder cusp domains.

pub mod cli;
pub mod domain;
pub mod error;
pub mod mapping;
pub mod modulus;
pub mod quadrature;
pub mod report;
pub mod sparse;
pub mod spectral;
pub mod suite;
pub mod verify;

pub use domain::DomainSpec;
pub use error::{Error, Result};
pub use mapping::{DilatationKind, JacobianData, MappingSpec, NormConvention, PlanarPoint};
