//! Interacting hypoelliptic diffusions on lattices.
//!
//! Finite-box approximations of lattice systems whose sites carry a
//! Heisenberg-type (or Euclidean, Grushin, Martinet) diffusion, confined by
//! a dilation drift and coupled by bounded finite-range interactions. The
//! crate simulates these systems and runs numerical checks of the
//! ingredients behind existence of an equilibrium measure.

pub mod cli;
pub mod config;
pub mod control;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod interactions;
pub mod models;
pub mod poly;
pub mod registry;
pub mod runner;
pub mod simulate;

pub use error::{Error, Result};
