//! Radial wave operators on asymptotically flat stationary metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod evolution;
pub mod grid;
pub mod harness;
pub mod jet;
pub mod metric;
pub mod operator;
pub mod par;
pub mod poisson;
pub mod quad;
pub mod resolvent;
pub mod symbolic;
pub mod synthesis;
pub mod tails;
