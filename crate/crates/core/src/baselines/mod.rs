//! Comparison scorers: uniform random, the single-logistic Simple CT model,
//! and the linear R-learner.

mod random;
mod rlearner;
mod simple_ct;

pub use random::random_scores;
pub use rlearner::{
    fit_rlearner, fit_rlearner_dimension, least_squares, LinearEffect, RLearnerModel,
};
pub use simple_ct::{train_simple_ct, SimpleCtModel};
