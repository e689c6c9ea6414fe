//! Dense numeric kernel: matrices, simplex utilities, stable softmax, seeded streams.

mod matrix;
mod rng;
mod simplex;

pub use matrix::{argmax, dot, norm, Matrix, Vector};
pub use rng::{purpose, RngStream};
pub use simplex::{
    log_softmax, log_sum_exp, normalize_to_simplex, softmax, ProbVector, SIMPLEX_TOL,
};
pub(crate) use simplex::{lse_unchecked, softmax_in_place};
