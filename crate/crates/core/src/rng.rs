//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, index, draw)`: the four
//! words are folded together through the SplitMix64 finalizer. Changing the
//! number of samples never reshuffles earlier samples, and draws can be made
//! in any order or in parallel. The algorithm is part of the file-format
//! contract for synthetic data and must not change.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { key: mix(mix(seed.wrapping_add(GOLDEN)) ^ stream.wrapping_mul(GOLDEN)) }
    }

    pub fn bits(&self, index: u64, draw: u64) -> u64 {
        let h = mix(self.key ^ index.wrapping_add(GOLDEN).wrapping_mul(0xD1B5_4A32_D192_ED03));
        mix(h ^ draw.wrapping_add(GOLDEN).wrapping_mul(0xABC9_8388_FB8F_AC03))
    }

    /// Uniform in the open interval `(0, 1)` with 53 bits of resolution.
    pub fn uniform(&self, index: u64, draw: u64) -> f64 {
        ((self.bits(index, draw) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (cosine branch) on draws
    /// `draw` and `draw + 1`.
    pub fn normal(&self, index: u64, draw: u64) -> f64 {
        let u1 = self.uniform(index, draw);
        let u2 = self.uniform(index, draw + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&self, index: u64, draw: u64, n: usize) -> usize {
        ((self.uniform(index, draw) * n as f64) as usize).min(n - 1)
    }
}

/// Deterministic Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let rng = CounterRng::new(seed, stream);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64, 0, i + 1);
        order.swap(i, j);
    }
    order
}
