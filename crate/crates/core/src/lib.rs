//! Robust optimization by projected saddle-point methods.
//!
//! The crate solves problems of the form
//!
//! ```text
//! minimize f0(x)  subject to  max_{z in Z_m} g_m(x, z) <= 0,  m = 1..M,  x in X
//! ```
//!
//! using only subgradient and projection oracles. [`outer::solve`] runs the
//! multiplier/proximal outer loop, [`inner`] holds the saddle solver it calls,
//! and [`outer::solve_extended`] handles uncertainty sets given as an
//! intersection of a simple set with convex cuts.

pub mod baselines;
pub mod error;
pub mod inner;
pub mod linalg;
pub mod outer;
pub mod problem;
pub mod problems;
pub mod sets;
pub mod trace;

pub use error::{Error, Result};
