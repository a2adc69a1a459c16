//! Radial function calculus: cutoffs, the Japanese bracket, symbol-class
//! seminorms and annulus-localized weighted norms.

pub mod cutoff;
pub mod norms;
pub mod profile;
pub mod seminorm;

use thiserror::Error;

pub use cutoff::{
    beta, beta_partial_sum, chi_above, chi_below, chi_near, japanese_bracket, smooth_min,
};
pub use norms::{eval_weighted_norm, Field, WeightedNorm};
pub use profile::{RadialProfile, SymbolClass};
pub use seminorm::{estimate_seminorms, DyadicAnnulus, SeminormTable, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum SymbolicError {
    #[error("radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
    #[error("argument must be positive, got {0}")]
    NonPositive(f64),
    #[error("derivative of order {needed} requested, profile carries {available}")]
    InsufficientOrder { needed: usize, available: usize },
    #[error("empty sample range")]
    EmptyRange,
    #[error("grid reaches r = {r_max} but annulus {m} needs r = {needed}")]
    GridCoverage { m: u32, needed: f64, r_max: f64 },
    #[error("invalid table: {0}")]
    InvalidTable(String),
}
