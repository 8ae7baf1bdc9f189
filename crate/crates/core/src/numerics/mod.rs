//! Dense matrices, differentiable primitives, optimiser, and a finite-difference checker.

mod gradcheck;
mod layers;
mod matrix;
mod optim;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use layers::{
    gelu, gelu_grad, hard_sign, LayerNorm, LayerNormCache, Linear, SignGradient, LAYER_NORM_EPS,
};
pub use matrix::{dot, squared_distance, Elementwise, Matrix};
pub use optim::{Adam, AdamConfig, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single PRNG type threaded through every stochastic operation.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
