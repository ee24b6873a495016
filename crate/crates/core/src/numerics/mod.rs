//! Deterministic numeric building blocks shared by the text and image models.
//!
//! Everything here is pure: the only state is what callers pass in explicitly
//! ([`AdamState`], [`SeededRng`]).

mod adam;
mod gradcheck;
mod loss;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState, OptimizerConfig};
pub use gradcheck::{grad_check, relative_error, DEFAULT_FD_STEP};
pub use loss::{cross_entropy, softmax, softmax_cross_entropy_grad, PROBABILITY_CLIP};
pub use rng::SeededRng;
pub use tensor::{matmul, Tensor};
