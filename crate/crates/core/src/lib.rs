//! Homogenization toolkit for two-scale dual-continuum diffusion systems
//! whose continua exchange mass at rate `Q(x, x/eps) / eps`.
//!
//! The pipeline runs from problem data ([`coeffs`]) through periodic cell
//! problems ([`cell`]) and effective coefficients ([`effective`]) to the
//! homogenized solver ([`macrosolve`]). The resolved two-scale solver
//! ([`finesolve`]) and the corrector and error harness ([`verify`]) measure
//! how close the two are as `eps` shrinks.

pub mod cell;
pub mod coeffs;
pub mod effective;
pub mod error;
pub mod expr;
pub mod fem;
pub mod finesolve;
pub mod linalg;
pub mod macrosolve;
pub mod mesh;
pub mod verify;

pub use error::{Error, Result};
