//! Deterministic, splittable random number generation.
//!
//! Every random draw in this crate flows from a single 64-bit seed through
//! this counter-based generator. The n-th output of a stream is a pure
//! function of (key, n), and [`DetRng::derive`] creates an independent child
//! stream from a tag without consuming draws from the parent. This is what
//! makes chunked-parallel corpus generation byte-identical to a sequential
//! run: each example derives its own stream from its index.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const DERIVE_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// SplitMix64 finalizer: a well-mixed 64-bit bijection.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based deterministic RNG (SplitMix64 stream).
#[derive(Debug, Clone)]
pub struct DetRng {
    key: u64,
    ctr: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { key: seed, ctr: 0 }
    }

    /// Independent child stream identified by `tag`. Pure in (key, tag):
    /// does not depend on how many draws the parent has consumed.
    pub fn derive(&self, tag: u64) -> Self {
        DetRng {
            key: mix(self.key ^ mix(tag.wrapping_mul(GOLDEN) ^ DERIVE_SALT)),
            ctr: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix(self.key.wrapping_add(self.ctr.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Consumes two draws per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.open_uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n) by multiply-shift. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index sampled from an (unnormalized is fine) nonnegative weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
