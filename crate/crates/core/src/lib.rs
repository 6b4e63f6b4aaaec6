//! Pulsating traveling fronts in space-time periodic reaction-advection-diffusion media.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the stencil formulas over several parallel arrays.
#![allow(clippy::needless_range_loop)]

pub mod audit;
pub mod cli;
pub mod dispersion;
pub mod equilibrium;
pub mod error;
pub mod floquet;
pub mod front;
pub mod linalg;
pub mod medium;
pub mod optimize;
pub mod output;
pub mod spreading;

pub use error::{Error, Result};
