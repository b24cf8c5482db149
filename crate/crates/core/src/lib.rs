//! Grade-of-Membership models for multivariate binary data.

// tables keep their published digits; negated comparisons reject NaN
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod extended;
pub mod generate;
pub mod io;
pub mod lcm;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod rng;
pub mod selection;
pub mod special;
pub mod validation;
pub mod vem;

pub use error::{GomError, Result};
pub use model::{Dataset, GomParams, LatentClassification, MembershipVector, ResponsePattern};
