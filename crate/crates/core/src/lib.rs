//! Continuous treatment policy matching: learn which subject to match with
//! which candidate, and at what treatment intensity, by maximizing a
//! weighted estimate of the treatment effect on logged sessions.
//!
//! The guide in `book/` walks through each module with runnable examples.

pub mod baselines;
pub mod ctpm;
pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod math;
pub mod propensity;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
