//! Monte Carlo and exact tools for the FK random-cluster model and the
//! Potts colorings obtained by coloring its clusters.

// Parameter guards are written `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod clusters;
pub mod coloring;
pub mod error;
pub mod exact;
pub mod fk;
pub mod harness;
pub mod lattice;
pub mod report;
pub mod rng;
pub mod stats;
pub mod unionfind;

pub use error::{Error, Result};
