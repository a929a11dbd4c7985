//! Deterministic random number generation with keyed sub-streams.
//!
//! Every random decision in the simulator draws from a stream derived from
//! the master seed and a purpose key (round number, client id, ...). Streams
//! are independent by construction, so components can run in any order or in
//! parallel without perturbing each other's draws.
//!
//! Sub-seed derivation: starting from the seed, each key word is absorbed as
//! `state = mix64(state ^ word)`, where `mix64` is the SplitMix64 finalizer.
//! The resulting state seeds a xoshiro256++ generator.

/// SplitMix64 finalizer. Bijective on u64 with strong avalanche behavior.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `seed` and a sequence of purpose keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mut state = mix64(seed);
    for &k in keys {
        state = mix64(state ^ k);
    }
    state
}

// Purpose keys for the seed fan-out, grouped here so the whole derivation
// tree is visible in one place.
pub mod keys {
    pub const DATASET: u64 = 0x01;
    pub const TEST_SET: u64 = 0x02;
    pub const MODEL_INIT: u64 = 0x04;
    pub const SELECT: u64 = 0x05;
    pub const CLIENT_TRAIN: u64 = 0x06;
    pub const FC_PRETRAIN: u64 = 0x07;
    pub const FC_FINETUNE: u64 = 0x08;
    pub const MALICIOUS: u64 = 0x09;
    pub const ATTACK_STREAM: u64 = 0x0a;
    pub const VACCINE: u64 = 0x0b;
    pub const SERVER_UPDATE: u64 = 0x0c;
    pub const EPOCH_SHUFFLE: u64 = 0x0d;
}

/// xoshiro256++ generator, seeded through SplitMix64.
///
/// Hand-rolled so that streams are bit-stable across platforms and releases;
/// report files are compared byte-for-byte in the determinism checks.
#[derive(Debug, Clone)]
pub struct Rng64 {
    s: [u64; 4],
    normal_cache: Option<f64>,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next = || {
            sm = sm.wrapping_add(0x9e37_79b9_7f4a_7c15);
            mix64(sm)
        };
        let s = [next(), next(), next(), next()];
        Self {
            s,
            normal_cache: None,
        }
    }

    /// Stream keyed by `(seed, keys...)`; see [`derive_seed`].
    pub fn from_keys(seed: u64, keys: &[u64]) -> Self {
        Self::new(derive_seed(seed, keys))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Bernoulli draw with probability `p`.
    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; the second value of each pair is
    /// cached.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.normal_cache.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.normal_cache = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, data: &mut [T]) {
        for i in (1..data.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            data.swap(i, j);
        }
    }

    /// `k` distinct values sampled uniformly from [0, n), ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        // Partial Fisher-Yates over the index array.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut out = pool[..k].to_vec();
        out.sort_unstable();
        out
    }
}
