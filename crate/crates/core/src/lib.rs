//! Deep material networks for short-fiber composites.
//!
//! The crate covers the full pipeline: Mandel tensor algebra, the binary
//! laminate network and its linear forward pass, offline training with
//! backpropagated gradients, regression-based instantiation from fiber
//! orientation descriptors, elastoplastic constituents, the nonlinear
//! network iteration, and an explicit hex8 finite-element driver with a
//! network at every quadrature point.

pub mod error;
pub mod fe;
pub mod io;
pub mod material;
pub mod mandel;
pub mod network;
pub mod online;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};

#[cfg(test)]
use crate as dmn;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
#[allow(dead_code)]
pub(crate) mod test_oracle;
