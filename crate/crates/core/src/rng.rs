//! Counter-based random streams.
//!
//! A stream is a `(seed, stream_id)` pair backed by ChaCha8, whose 64-bit
//! stream selector gives independent sequences for the same seed. Parallel
//! trials each take their own stream id and never share state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stream ids used by the experiment harness.
pub mod streams {
    pub const DATA: u64 = 0;
    pub const INIT: u64 = 1;
    pub const TRAINING: u64 = 2;
    /// Trial `i` uses `TRIALS_BASE + i`.
    pub const TRIALS_BASE: u64 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Gaussian tensor drawn from the start of `stream`.
pub fn rng_normal(stream: RngStream, shape: &[usize], mean: f32, stddev: f32) -> Result<Tensor> {
    let mut rng = stream.rng();
    normal_from(&mut rng, shape, mean, stddev)
}

/// Gaussian tensor drawn from an existing generator, advancing it.
pub fn normal_from(rng: &mut impl Rng, shape: &[usize], mean: f32, stddev: f32) -> Result<Tensor> {
    if !(stddev >= 0.0) || !stddev.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "rng_normal needs finite mean and stddev >= 0, got mean={mean} stddev={stddev}"
        )));
    }
    let numel: usize = shape.iter().product();
    let data = if stddev == 0.0 {
        vec![mean; numel]
    } else {
        let dist = Normal::new(mean as f64, stddev as f64).expect("validated");
        (0..numel).map(|_| dist.sample(rng) as f32).collect()
    };
    Tensor::new(shape.to_vec(), data)
}

/// One standard normal draw.
pub fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
