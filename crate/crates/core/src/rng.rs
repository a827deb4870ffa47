//! Seeded random streams and categorical sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type AgentRng = ChaCha8Rng;

/// Independent stream `stream` of the generator family rooted at `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> AgentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids used by the trainer. Workers and eval points are offset into these bands.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_AGENT: u64 = 1 << 20;
pub const STREAM_ENV: u64 = 2 << 20;
pub const STREAM_EVAL: u64 = 3 << 20;

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub const ENCODED_LEN: usize = 32 + 16 + 8;

    pub fn capture(rng: &AgentRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> AgentRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Inverse-CDF draw from `probs`. Assumes a valid distribution; floating-point
/// shortfall in the cumulative sum falls back to the last index with mass.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
