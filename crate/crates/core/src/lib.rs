//! Projection-based fault detection and uncertainty estimation for affine
//! nonlinear plants.
//!
//! The normalized stable image representation (SIR) of a plant generates its
//! nominal input/output data; the normalized stable kernel representation (SKR)
//! annihilates it. Composing each with its Hamiltonian adjoint gives projection
//! systems whose outputs feed Bregman-divergence evaluation functions.

pub mod divergence;
pub mod error;
pub mod estimation;
pub mod factorization;
pub mod harness;
pub mod linalg;
pub mod lti_oracle;
mod ode;
pub mod plants;
pub mod projection;
pub mod signals;
pub mod systems;

pub use error::{Error, Result};
