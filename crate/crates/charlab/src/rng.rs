//! Deterministic pseudo-random number generation.
//!
//! The generator is xoshiro256** seeded through SplitMix64, reproduced here
//! from the published reference algorithms so that the exact byte-level
//! behaviour is part of this crate's file-format contract: a vocabulary file
//! built from `(seed, vocab_size, K)` must be identical across
//! implementations. Bounded draws use unbiased rejection sampling: a raw
//! 64-bit draw `x` is rejected while `x >= 2^64 - (2^64 mod n)` and otherwise
//! reduced as `x mod n`.

/// One step of the SplitMix64 sequence; returns the mixed output and advances
/// the state in place.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Seeds the four state words from SplitMix64(seed).
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Derives an independent stream from a root seed and a label path.
    ///
    /// Streams for distinct label paths are independent for all practical
    /// purposes, which lets batch items own their own generator regardless of
    /// evaluation order.
    pub fn from_path(root: u64, labels: &[u64]) -> Self {
        Rng::from_seed(stream_seed(root, labels))
    }

    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state(s: [u64; 4]) -> Self {
        Rng { s }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `0..n` by rejection sampling.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (the sine branch is discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Folds a label path into a single stream seed.
pub fn stream_seed(root: u64, labels: &[u64]) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for &label in labels {
        let mut mix = out ^ label;
        out = splitmix64(&mut mix);
    }
    out
}
