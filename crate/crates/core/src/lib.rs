//! Stabilized finite element solver for the two-dimensional incompressible
//! Navier-Stokes equations on the periodic unit square, written in
//! vorticity-stream-function form, together with filtered-error a posteriori
//! estimators and a small experiment harness.

pub mod error;
pub mod estimators;
pub mod fespace;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod stabilizers;

pub use error::{Error, Result};
