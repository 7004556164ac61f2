//! Dense/sparse matrix plumbing and the autodiff tape the model runs on.

pub mod sparse;
pub mod tape;

pub use sparse::Csr;
pub use tape::{log_sum_exp, lp_norm, softmax_in_place, Grads, SetLayout, Tape, Var};
