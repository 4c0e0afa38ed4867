//! Patch-based image restoration with a conditional-random-field posterior.
//!
//! The whole-image posterior is a product of per-patch potentials, each a
//! patch likelihood times a patch prior whose parameters are shared by a
//! cluster of similar patches. The MAP estimate is computed by
//! split-and-penalize block coordinate descent ([`solver`]) with either a
//! Gaussian or a Gaussian-scale-mixture patch prior ([`priors`]).

// `!(x > 0.0)` style checks are meant to catch NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod error;
pub mod imgcore;
pub mod matching;
pub mod numerics;
pub mod priors;
pub mod solver;

pub use error::{Error, Result};
pub use imgcore::{Image, PatchMatrix, PatchSystem};
