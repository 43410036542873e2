//! Rearrangement operators on discretized balls and annuli, and a symmetric
//! Ekeland selection that turns minimizing sequences of non-convex integral
//! functionals into almost-symmetric ones.

pub mod cli;
pub mod config;
pub mod ekeland;
pub mod error;
pub mod field;
pub mod functional;
pub mod geometry;
pub mod io;
pub mod optim;
pub mod oracle;
pub mod pipeline;
pub mod rearrange;
pub mod verify;

pub use error::{Error, Result};
pub use field::{GridFunction, NormKind};
pub use geometry::{DomainSpec, Grid, GridMode, HalfSpace, Shape};
