//! Seeded pseudo-random numbers with a pinned algorithm.
//!
//! Every random draw in this crate (weight init, batch shuffling, data
//! jitter, noise augmentation) flows through [`SplitMix64`] so that results
//! are reproducible from a seed alone, independent of platform or external
//! crate versions. The exact transforms are part of the artifact's
//! reproducibility contract:
//!
//! * state update: `s += 0x9E3779B97F4A7C15`, then the output is
//!   `z = s; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`
//! * uniform doubles take the top 53 bits: `next_f64 = (next_u64() >> 11) * 2^-53`
//! * normal variates use Box-Muller on one uniform pair:
//!   `u1 = ((next_u64() >> 11) + 1) * 2^-53` (never zero),
//!   `u2 = (next_u64() >> 11) * 2^-53`,
//!   `z0 = sqrt(-2 ln u1) * cos(2π u2)`, `z1 = sqrt(-2 ln u1) * sin(2π u2)`,
//!   consumed in order `z0, z1`.
//!
//! Per-instance seeds are derived as `base_seed XOR fnv1a64(instance_id)`
//! (see [`fnv1a64`]).

/// SplitMix64 generator. Cheap, full 64-bit state, passes BigCrush.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 {
            state: seed,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection, unbiased.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller; pairs are consumed in order.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 in (0, 1] so the log is finite; u2 in [0, 1).
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// In-place Fisher-Yates shuffle with draws from this generator.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// FNV-1a 64-bit hash (offset 0xcbf29ce484222325, prime 0x100000001b3).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seed for the per-instance random stream: `base ^ fnv1a64(id)`.
pub fn derive_seed(base: u64, instance_id: &str) -> u64 {
    base ^ fnv1a64(instance_id.as_bytes())
}
