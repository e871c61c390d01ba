//! Splittable counter-based pseudo-random generator (SplitMix64).
//!
//! Every stochastic component in the workspace draws from an explicitly seeded
//! [`Rng`]; there is no global generator. `fork` derives an independent stream
//! from a parent without advancing it, which keeps seeding diagrams easy to
//! reason about: the same seed always reproduces the same run byte for byte.

/// SplitMix64 generator. Passes BigCrush for the purposes it is used for here
/// (noise injection, initialization, data synthesis); not cryptographic.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream keyed by `stream` without advancing the
    /// parent. Forking twice with the same key yields the same child.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng {
            state: mix(self.state ^ stream.wrapping_mul(GAMMA).wrapping_add(0x1F0A_2BE7)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` via multiply-shift; `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box–Muller (one sample per call, deterministic).
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).max(f64::MIN_POSITIVE).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }
}
