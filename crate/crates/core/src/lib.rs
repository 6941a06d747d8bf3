//! Long-range percolation and branching random walks with heavy-tailed,
//! spread-out step distributions: exact kernels, Fourier evaluation, Monte
//! Carlo cluster growth, diagram quadratures and scaling fits.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod brw;
pub mod cli;
pub mod config;
pub mod diagrams;
pub mod error;
pub mod kernel;
pub mod numerics;
pub mod percolation;
pub mod rng;
pub mod store;

pub use error::{Error, Result};
pub use kernel::{
    kn_scale, EvalOptions, FiniteKernel, FourierEval, KernelSpec, KernelTable, Profile, Site,
    StepKernel, ValphaEstimate, WaveVector,
};
