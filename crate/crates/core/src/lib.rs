//! Combined fine-scale / localized orthogonal decomposition solver for
//! `−∇·(A∇u) = f` with a fine-resolved subdomain around singularities.
//!
//! The modules build on each other in this order: [`mesh`] and
//! [`coefficient`] describe the problem, [`assembly`] discretizes it,
//! [`transfer`] and [`lod`] construct the multiscale space, and [`methods`]
//! runs complete solves.

pub mod assembly;
pub mod coefficient;
pub mod convergence;
pub mod error;
pub mod experiments;
pub mod lod;
pub mod mesh;
pub mod methods;
pub mod sparse;
pub mod transfer;

pub use error::{Error, Result};
