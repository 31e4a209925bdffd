//! Reproducible random generation.
//!
//! The generator is xoshiro256++ (Blackman & Vigna) seeded through SplitMix64,
//! both implemented here so the stream is platform-independent and the full
//! generator state (four 64-bit words) serializes directly into checkpoint
//! files. The stream is pinned against the reference implementation's test
//! vectors in this module's tests.

use serde::{Deserialize, Serialize};

#[inline]
fn rotl(x: u64, k: u32) -> u64 {
    x.rotate_left(k)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random generator (xoshiro256++).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    s: [u64; 4],
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { seed, s }
    }

    /// The seed this generator was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw state words, for checkpoint serialization.
    pub fn state_words(&self) -> [u64; 4] {
        self.s
    }

    /// Rebuilds a generator at an exact stream position.
    pub fn from_parts(seed: u64, state: [u64; 4]) -> Self {
        Self { seed, s: state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = rotl(s[0].wrapping_add(s[3]), 23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) by rejection sampling; unbiased.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call and keeps
    /// only the cosine branch so the state stays a pure function of call count.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniformly random direction in `dim` dimensions (unit vector).
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_vectors() {
        // First outputs of the reference xoshiro256++ with state {1, 2, 3, 4}.
        let mut rng = RngState::from_parts(0, [1, 2, 3, 4]);
        let expected: [u64; 6] = [
            41943041,
            58720359,
            3588806011781223,
            3591011842654386,
            9228616714210784205,
            9973669472204895162,
        ];
        for e in expected {
            assert_eq!(rng.next_u64(), e);
        }
    }

    #[test]
    fn golden_streams_for_seeded_state() {
        // Frozen from an independent implementation of splitmix64 + xoshiro256++.
        let mut r0 = RngState::new(0);
        assert_eq!(
            r0.state_words(),
            [
                0xe220a8397b1dcdaf,
                0x6e789e6aa1b965f4,
                0x06c45d188009454f,
                0xf88bb8a8724c81ec
            ]
        );
        assert_eq!(r0.next_u64(), 0x53175d61490b23df);
        assert_eq!(r0.next_u64(), 0x61da6f3dc380d507);
        assert_eq!(r0.next_u64(), 0x5c0fdf91ec9a7bfc);

        let mut r42 = RngState::new(42);
        assert_eq!(r42.next_u64(), 0xd0764d4f4476689f);
        assert_eq!(r42.next_u64(), 0x519e4174576f3791);
        assert!((r42.next_f64() - 0.9838941681774888).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(123);
        let mut b = RngState::new(123);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn state_roundtrip_resumes_stream() {
        let mut a = RngState::new(9);
        for _ in 0..17 {
            a.next_u64();
        }
        let mut b = RngState::from_parts(a.seed(), a.state_words());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn next_below_is_in_range() {
        let mut rng = RngState::new(2);
        for _ in 0..10_000 {
            assert!(rng.next_below(7) < 7);
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = RngState::new(31);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = RngState::new(4);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
