//! Recursive marginal and product Markovian quantization of diffusions.
//!
//! The crate builds sequences of optimal quantization grids for one- and
//! two-factor SDEs discretized by the Euler or second-order weak (WO2)
//! schemes, together with the transition probabilities between consecutive
//! grids, and prices European, barrier and Bermudan options on them.
//! Independent Monte Carlo, characteristic-function and Black-76 oracles and
//! a calibration driver are included.
//!
//! The crate is `no_std` with `alloc`.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calibration;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod mixture;
pub mod oracles;
pub mod pricing;
pub mod quantize;
pub mod sde;

pub use quantize::{optimize_grid, Dist1D, Grid1D, OptimizeReport, Optimized, OptimizerConfig, QuantizeError, Support};
