//! Constructive single-neuron controls for neural ODE flows.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod catalog;
pub mod compressible;
pub mod error;
pub mod factorize;
pub mod gadgets;
pub mod incompressible;
pub mod kr;
pub mod linalg;
pub mod maurey;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
