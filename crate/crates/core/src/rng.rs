//! Seeded random streams.
//!
//! Every component draws from its own ChaCha stream selected by a stable
//! ordinal, so adding a component never perturbs the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `ordinal` under `seed`.
pub fn stream(seed: u64, ordinal: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal);
    rng
}

/// Nested stream: ordinal `(component, index)` packed into one u64.
pub fn substream(seed: u64, component: u32, index: u32) -> StreamRng {
    stream(seed, ((component as u64) << 32) | index as u64)
}

/// A child seed for item `index` of `component`, for configs that carry a
/// plain `u64` seed rather than a stream.
pub fn derive_seed(seed: u64, component: u32, index: u32) -> u64 {
    substream(seed, component, index).gen()
}

pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Xavier/Glorot uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound))
}

/// One Gumbel(0, 1) draw, `-ln(-ln u)` with `u ~ Uniform(0, 1)`.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}
