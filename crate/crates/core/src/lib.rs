//! U-statistics with values in a separable Hilbert space, computed on
//! strictly stationary absolutely regular sequences.
//!
//! The Hilbert space is modeled by `R^d`. The crate provides kernels and
//! their Hoeffding decomposition, stationary generators with exact mixing
//! coefficients, the blocking decomposition with Berbee coupling, explicit
//! deviation bounds with rate planning, and seeded Monte-Carlo experiments
//! for the functional CLT, the strong law and the bound itself.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocking;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod hilbert;
pub mod kernels;
pub mod processes;
pub mod rng;
pub mod ustat;

pub use error::{Error, Result};
pub use hilbert::{CovOperator, HPoint};
pub use kernels::{Kernel, State};
pub use processes::{Path, ProcessModel};
