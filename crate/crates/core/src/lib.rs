//! Identification diagnostics for the average treatment effect on the treated.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical pieces:
//! support stratification, propensity fitting, ATT estimators, identified
//! sets indexed by selection curvature, the minimax/fragility layer, the
//! outcome-dependent selection simulation and the bootstrap. File formats,
//! fetching and the command line live in the `fragility` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

mod error;
pub use error::{Error, Result};

pub mod data;
pub mod decision;
pub mod estimators;
pub mod identification;
pub mod linalg;
pub mod math;
pub mod propensity;
pub mod resample;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod strata;

pub use data::{Dataset, Delimiter, MergeKeep, SchemaSpec, UnitRecord};
pub use decision::{PolicyDecision, RegretProfile};
pub use estimators::{AttEstimate, MatchSpec, Metric};
pub use identification::{CurvatureSweep, Interval, OutcomeSupport, SweepMethod};
pub use propensity::{FitOptions, PropensityModel, TrimRule};
pub use strata::{BinSpec, CellStatus, SupportMap};
