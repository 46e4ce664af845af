//! Deterministic hashing and a counter-based random stream.
//!
//! Everything that needs randomness in the core (target sequences, the
//! built-in extractor, the simulated generator, attacks) draws from
//! [`CounterRng`], whose `i`-th output depends only on `(key, i)`. Truncating
//! or extending a stream therefore never changes the values already drawn.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 finalizer.
#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub const OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;

    pub const fn new() -> Self {
        Fnv64(Self::OFFSET)
    }

    pub const fn with_seed(seed: u64) -> Self {
        Fnv64(Self::OFFSET ^ seed)
    }

    #[inline]
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    #[inline]
    pub fn write_u8(&mut self, b: u8) {
        self.write(&[b]);
    }

    #[inline]
    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub const fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Hash a byte string with FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv64::new();
    h.write(bytes);
    h.finish()
}

/// Counter-mode generator: output `i` is `mix64(key + (i + 1) * γ)`.
///
/// This is SplitMix64 with random access. Child streams obtained through
/// [`CounterRng::split`] are keyed by a mixed `(key, stream)` pair and are
/// independent of the parent's position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ 0x5EED_CAFE_F00D_D00D),
            counter: 0,
        }
    }

    /// Output at an absolute position, without advancing.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Independent child stream.
    pub fn split(&self, stream: u64) -> CounterRng {
        CounterRng {
            key: mix64(self.key ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire's nearly-divisionless rejection.
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Partial Fisher-Yates: the first `k` elements of `items` become a
    /// uniformly random `k`-subset in random order.
    pub fn partial_shuffle<T>(&mut self, items: &mut [T], k: usize) {
        let n = items.len();
        for i in 0..k.min(n) {
            let j = i + self.below((n - i) as u64) as usize;
            items.swap(i, j);
        }
    }
}

/// Maps 64 random bits to `[0, 1)`.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Maps 64 random bits to `(0, 1]`.
#[inline]
pub fn unit_f64_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_sequence() {
        // SplitMix64 seeded with 0 (state advanced by γ before mixing).
        let mut state = 0u64;
        let mut next = || {
            state = state.wrapping_add(GOLDEN_GAMMA);
            mix64(state)
        };
        assert_eq!(next(), 0xe220a8397b1dcdaf);
        assert_eq!(next(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn stream_is_random_access() {
        let mut rng = CounterRng::new(42);
        let drawn: alloc::vec::Vec<u64> = (0..16).map(|_| rng.next_u64()).collect();
        let fresh = CounterRng::new(42);
        for (i, v) in drawn.iter().enumerate() {
            assert_eq!(*v, fresh.at(i as u64));
        }
    }

    #[test]
    fn split_streams_differ() {
        let rng = CounterRng::new(7);
        assert_ne!(rng.split(0).at(0), rng.split(1).at(0));
        assert_ne!(rng.split(0).at(0), rng.at(0));
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = CounterRng::new(1);
        for n in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..100 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn unit_maps_are_bounded() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
        assert!(unit_f64_open_closed(0) > 0.0);
        assert_eq!(unit_f64_open_closed(u64::MAX), 1.0);
    }
}
