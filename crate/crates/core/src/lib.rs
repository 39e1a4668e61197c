//! Parabolic Anderson model `∂u/∂t = κΔu + ξu` on a torus, driven by dynamic
//! random environments.
//!
//! The crate samples the environments exactly in continuous time, solves the
//! equation directly and through its Feynman-Kac representation, estimates
//! quenched and annealed Lyapunov exponents, and evaluates space-time block
//! and level-set percolation diagnostics.

pub mod diagnostics;
pub mod environments;
pub mod error;
pub mod feynman_kac;
pub mod harness;
pub mod lattice;
pub mod lyapunov;
pub mod percolation;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{FieldSnapshot, Lattice, Site};
