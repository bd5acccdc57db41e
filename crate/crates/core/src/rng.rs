//! Counter-indexed Gaussian noise streams.
//!
//! Every particle owns an independent ChaCha8 stream selected by its index,
//! and every draw occupies a fixed four-word slot in that stream. The normal
//! variate for `(seed, particle, slot)` is therefore a pure function of the
//! key, so results do not depend on how work is scheduled across threads.
//! Slot 0 is the initial position; slot `k + 1` drives time step `k`.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

// two u64 draws, i.e. four 32-bit words
const WORDS_PER_SLOT: u128 = 4;

#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    /// Stream positioned at slot 0.
    pub fn new(seed: u64, particle: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(particle);
        Self { rng }
    }

    /// Stream positioned at `slot`.
    pub fn at(seed: u64, particle: u64, slot: u64) -> Self {
        let mut s = Self::new(seed, particle);
        s.seek(slot);
        s
    }

    pub fn seek(&mut self, slot: u64) {
        self.rng.set_word_pos(WORDS_PER_SLOT * slot as u128);
    }

    /// Standard normal draw (Box–Muller, cosine branch). Consumes one slot.
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl NoiseStream {
    /// Uniform draw on (0, 1). Consumes one slot.
    pub fn next_uniform(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let _ = self.rng.next_u64();
        ((a >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// The normal variate keyed by `(seed, particle, slot)`.
pub fn normal_at(seed: u64, particle: u64, slot: u64) -> f64 {
    NoiseStream::at(seed, particle, slot).next_normal()
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
