//! Evidence analysis for small CNN classifiers.
//!
//! The crate bundles a self-contained f64 inference/training engine, a
//! conditional Gaussian patch model, three prediction-difference
//! attribution algorithms plus a gradient saliency baseline, numerical
//! checks for the mean-propagation approximations behind them, and a
//! red/blue heatmap renderer.
//!
//! All randomness flows through explicitly seeded ChaCha8 generators;
//! every analysis is bit-reproducible from its seed, including under
//! window-parallel execution.

pub mod approx;
pub mod error;
pub mod evidence;
pub mod grad;
pub mod idx;
pub mod network;
pub mod patch;
pub mod render;
pub mod tensor;
pub mod testkit;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// The crate-wide pseudo-random generator. ChaCha8 keyed from a 64-bit
/// seed: fast, portable and stable across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Derives the generator for a numbered work item (window, case, repeat)
/// from a base seed so parallel and serial schedules sample identically.
pub fn rng_for(base_seed: u64, index: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(base_seed.wrapping_add(index))
}
