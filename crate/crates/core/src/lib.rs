//! Identification testing for mediation, dynamic treatment, and sample
//! selection models.
//!
//! The crate has two halves that share a common cast of variables
//! (outcome `Y`, treatment `D`, mediator `M`, instruments `Z1`/`Z2`,
//! covariate blocks `X` and `W`):
//!
//! * a graphical half ([`graph`], [`theorems`]) that encodes identifying
//!   assumptions and their testable implications as d-separation queries
//!   and verifies the equivalence theorems by exhaustive enumeration of
//!   the causal-graph family, and
//! * a statistical half ([`ml`], [`idtest`], [`dgp`], [`effects`],
//!   [`harness`]) that runs the cross-fitted conditional mean independence
//!   test on tabular data, estimates the associated treatment effects, and
//!   replicates the simulation tables.

pub mod dgp;
pub mod effects;
pub mod error;
pub mod graph;
pub mod harness;
pub mod idtest;
pub mod ml;
pub mod records;
pub mod seed;
pub mod theorems;

pub use error::{Error, Result};
