//! Named random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 generator keyed by
//! the root seed, with the 64-bit stream id derived from a stream name such as
//! `teacher` or `distill/2/5/mlp-r2`. ChaCha is counter based, so streams are
//! independent of each other and of the order in which jobs run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// FNV-1a over the stream name, used as the ChaCha stream id.
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator for `name` under `root_seed`.
pub fn stream(root_seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream_id(name));
    rng
}

/// Derives a child seed, for APIs that take a plain `u64`.
pub fn derive_seed(root_seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    stream(root_seed, name).next_u64()
}

pub fn normal(rng: &mut StreamRng) -> f32 {
    let x: f64 = StandardNormal.sample(rng);
    x as f32
}

/// Normal with standard deviation `std`, resampled outside two standard deviations.
pub fn trunc_normal(rng: &mut StreamRng, std: f32) -> f32 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= 2.0 {
            return x as f32 * std;
        }
    }
}
