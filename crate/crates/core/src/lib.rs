//! Classical analysis stack for spot-checked device-independent randomness
//! expansion.
//!
//! The crate is organised the way the analysis flows:
//!
//! * [`model`] holds CHSH-scenario trial distributions, the Tsirelson-bounded
//!   non-signaling polytope and its 80 extreme points, maximum-likelihood
//!   fitting of calibration counts and the statistical strength against local
//!   realism.
//! * [`pef`] constructs and optimizes probability estimation factors (PEFs)
//!   per trial position, builds per-block PEF tables by linear interpolation
//!   and computes the block gain rate, its variance and entropy certificates.
//! * [`protocol`] simulates honest spot-checked blocks and runs the running
//!   entropy-witness accumulation with per-cycle PEF updates.
//! * [`extractor`] does the Trevisan (TMPS) parameter arithmetic.
//! * [`planner`] answers commissioning questions: feasibility of expansion,
//!   minimum block counts, optimal block length, thresholds and completeness.

// Index loops mirror the summation formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extractor;
pub mod model;
pub mod pef;
pub mod planner;
pub mod protocol;
pub mod reference;

mod barrier;

pub use error::{Error, Result};
