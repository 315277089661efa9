//! Seedable deterministic random number generation.
//!
//! A single xorshift64* generator drives every stochastic choice in the
//! crate so that a run is fully reproducible from one 64-bit seed and the
//! generator state can be captured in a checkpoint as one word.
//!
//! Gaussian draws use the Box-Muller transform. Each call consumes two
//! uniforms and returns one variate; nothing is cached between calls, so
//! the full generator state is the single `u64`.

/// Xorshift64* generator with splitmix64 seeding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    /// Create a generator from a seed. Any seed is valid, including 0:
    /// the seed is first diffused through splitmix64 so the xorshift
    /// state is never zero.
    pub fn from_seed(seed: u64) -> Self {
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng {
            state: if z == 0 { 0x9E37_79B9_7F4A_7C15 } else { z },
        }
    }

    /// Reconstruct a generator from a raw state word (checkpoint restore).
    pub fn from_state(state: u64) -> Self {
        Rng {
            state: if state == 0 { 0x9E37_79B9_7F4A_7C15 } else { state },
        }
    }

    /// Raw state word for checkpointing.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform double in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal variate via Box-Muller:
    /// z = sqrt(-2 ln u1) * cos(2 pi u2), with u1 in (0, 1].
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fill a buffer with N(0, sigma^2) draws cast to f32.
    pub fn fill_gaussian_f32(&mut self, buf: &mut [f32], sigma: f64) {
        for v in buf.iter_mut() {
            *v = (self.gaussian() * sigma) as f32;
        }
    }

    /// Vector of standard normal draws.
    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }
}
