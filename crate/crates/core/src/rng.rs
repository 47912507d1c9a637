//! Counter-based Gaussian draws: the normals for counter `k` depend only on
//! `(seed, stream, k)`, never on the order in which counters are visited.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit words consumed per counter (two `u64` draws).
const WORDS_PER_COUNTER: u128 = 4;

pub struct CounterNormals {
    rng: ChaCha8Rng,
}

impl CounterNormals {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        CounterNormals { rng }
    }

    /// Two independent standard normals for `counter` (Box–Muller).
    pub fn pair(&mut self, counter: u64) -> (f64, f64) {
        self.rng.set_word_pos(counter as u128 * WORDS_PER_COUNTER);
        let u1 = 1.0 - unit(self.rng.next_u64());
        let u2 = unit(self.rng.next_u64());
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    pub fn normal(&mut self, counter: u64) -> f64 {
        self.pair(counter).0
    }
}

/// Seed of replicate `index` in a run keyed by `base` (SplitMix64 finalizer),
/// so that runs with nearby base seeds do not share replicates.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` from the top 53 bits.
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
