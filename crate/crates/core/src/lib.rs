//! Numerical library for stochastic (functional) differential equations
//! driven by fractional Brownian motion: fractional calculus on uniform
//! grids, fBm kernel transforms and path sampling, pathwise Euler/Picard
//! solvers, Malliavin-weight gradient estimators of semigroup derivatives,
//! and empirical checks of Harnack-type inequalities.

pub mod bismut;
pub mod error;
pub mod fbm;
pub mod harnack;
pub mod fractional;
pub mod grid;
pub mod mc;
pub mod model;
pub mod oracle;
pub mod sde;
pub(crate) mod special;
pub mod transforms;
pub mod validate;

pub use error::{Error, Result};
pub use fbm::{FbmPath, Hurst, HurstRegime, Provenance, WienerPath};
pub use grid::{Grid, GridFunction, VecSeries};
