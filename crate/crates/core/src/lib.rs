//! Riemannian flow matching for crystals.
//!
//! A crystal lives on the product of a flat torus (fractional coordinates)
//! and a Euclidean box (lattice lengths, and angles mapped to an
//! unconstrained space). A learned, finite-precision base distribution
//! supplies starting points, and a permutation-equivariant,
//! translation-invariant message-passing network transports them to the
//! data distribution by Euler integration.
//!
//! Numerical code is generic over [`Real`] (`f32`/`f64`); the aliases at
//! the crate root fix the scalar to `f64`, which the tests and CLI use.

pub mod assign;
pub mod base;
pub mod cif;
pub mod crystal;
pub mod elements;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod niggli;
pub mod real;
pub mod sampling;
pub mod synthetic;
pub mod training;

#[doc(hidden)]
pub mod testing;

pub use crystal::{Composition, Crystal, LatticeMatrix, LatticeParams};
pub use elements::Element;
pub use error::{Error, Result};
pub use geometry::{FlowState, TangentVector};
pub use real::Real;

pub type Crystal64 = crystal::Crystal<f64>;
pub type Crystal32 = crystal::Crystal<f32>;
pub type LatticeParams64 = crystal::LatticeParams<f64>;
pub type TangentVector64 = geometry::TangentVector<f64>;
pub type FlowState64 = geometry::FlowState<f64>;
pub type VelocityNet64 = net::VelocityNet<f64>;
pub type VelocityNet32 = net::VelocityNet<f32>;
pub type PairDataset64 = training::PairDataset<f64>;
