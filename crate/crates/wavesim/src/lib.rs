//! Frequency-domain scattered acoustic wavefield simulation.
//!
//! The scattered field of a point source in a heterogeneous medium is
//! represented by a sine-activated coordinate network whose bias-free
//! linear output layer is not trained by gradient descent: at every step
//! its optimal weights are obtained from a damped least-squares solve of
//! the wave-equation residual system, and the remaining parameters descend
//! the loss *through* that solve. The same residual systems drive a plain
//! gradient-descent baseline, and a finite-difference direct solver
//! provides reference solutions for validation. Both formulations are
//! supported: the plain Helmholtz operator on the interior, and the
//! complex-stretched operator with an absorbing collar.
//!
//! Modules:
//! - [`medium`]: geometry, absorbing-layer stretching factors, velocity
//!   rasters, analytic background wavefield.
//! - [`special`]: Bessel/Hankel functions backing the background field.
//! - [`network`]: coordinate network with forward-mode second-order jets.
//! - [`ls`]: residual system assembly, damped normal-equation solve and
//!   its exact adjoint.
//! - [`train`]: collocation sampling, Adam, both training regimes,
//!   validation.
//! - [`fd`]: finite-difference reference solver (banded direct solve).
//! - [`field`], [`io`], [`config`], [`cli`]: field containers, bit-exact
//!   file formats, run configuration and the command layer.
//!
//! The `examples/` directory holds one runnable example per capability;
//! `wavesim --help` lists the command-line surface.

pub mod cli;
pub mod config;
pub mod error;
pub mod fd;
pub mod field;
pub mod io;
pub mod ls;
pub mod medium;
pub mod network;
pub mod special;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
