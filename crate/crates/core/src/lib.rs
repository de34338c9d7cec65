//! Nonlocal diffusion on stratified (Carnot) groups.
//!
//! The crate implements exponential-coordinate group arithmetic, the
//! compactly supported jump kernels and the three rescaled nonlocal
//! operators built from them, explicit and fixed-point time integrators for
//! the nonlocal Dirichlet problems, independent finite-difference solvers
//! for the local limit equations, and a study harness that measures the
//! consistency and convergence rates as the scale parameter goes to zero.

pub mod coeffs;
pub mod config;
pub mod error;
pub mod grid;
pub mod group;
pub mod kernel;
pub mod linalg;
pub mod localref;
pub mod nonlocal;
pub mod operators;
pub mod quad;
pub mod report;
pub mod study;
pub mod validate;

pub use error::{Error, Result};
pub use group::{ScalarField, Smoothness, StratifiedGroup, TimeField};
pub use kernel::{make_bump_kernel, KernelJ, KernelShape};
