//! EKP: two-stage training of per-kernel predictors combined with
//! norm-capped non-negative weights, learning-kernel baselines for
//! comparison, and numerical checks of the Rademacher complexity of the
//! ensemble hypothesis sets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod combiner;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod learners;
pub mod mkl;
pub mod projection;
pub mod rademacher;
pub mod report;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
