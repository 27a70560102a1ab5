//! SplitMix64-based seeding and uniform generation.
//!
//! Every algorithm in the crate (the cascade levels, ring point hashes, straw
//! hashes, synthetic corpora) draws from this one generator so that comparisons
//! between placement schemes only differ in the scheme itself.

/// Weyl increment of SplitMix64.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// 2^-53, scales a 53-bit integer into [0, 1).
const UNIT_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// One SplitMix64 step applied to `x` as if it were the generator state.
#[inline]
pub fn mix_round(x: u64) -> u64 {
    finalize(x.wrapping_add(GOLDEN_GAMMA))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u64);

impl Seed {
    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

/// Mixes a datum id with a salt: two mixing rounds over `id ^ rotl(salt, 32)`.
#[inline]
pub fn seed_from(datum_id: u64, salt: u64) -> Seed {
    Seed(mix_round(mix_round(datum_id ^ salt.rotate_left(32))))
}

/// Folds a byte string to 64 bits.
///
/// The accumulator starts at the byte length; each 8-byte little-endian chunk
/// (the last one zero-padded) is folded in with `seed_from(acc, chunk)`.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut acc = bytes.len() as u64;
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        acc = seed_from(acc, u64::from_le_bytes(word)).0;
    }
    acc
}

/// A SplitMix64 generator. Cheap to construct, so one can be built per lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Generator {
    state: u64,
}

impl Generator {
    #[inline]
    pub fn new(seed: Seed) -> Self {
        Generator { state: seed.0 }
    }

    #[inline]
    pub fn next_integer(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        finalize(self.state)
    }

    /// Uniform in [0, 1) from the top 53 bits of the next integer.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_integer() >> 11) as f64 * UNIT_53
    }

    /// The `index`-th integer this generator will emit (0-based), without advancing.
    #[inline]
    pub fn peek_integer(&self, index: u64) -> u64 {
        finalize(
            self.state
                .wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square(counts: &[u64], expected: f64) -> f64 {
        counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum()
    }

    fn critical_0_001(bins: usize) -> f64 {
        ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999)
    }

    #[test]
    fn seed_from_is_deterministic() {
        for (a, b) in [(0, 0), (17, 99), (u64::MAX, 3)] {
            assert_eq!(seed_from(a, b), seed_from(a, b));
        }
    }

    #[test]
    fn seed_from_zero_zero_golden() {
        assert_eq!(seed_from(0, 0).value(), 0xa706_dd2f_4d19_7e6f);
    }

    #[test]
    fn salts_separate_outputs() {
        let mut g = Generator::new(Seed(0x5eed));
        for _ in 0..10_000 {
            let x = g.next_integer();
            let s1 = g.next_integer();
            let s2 = g.next_integer();
            if s1 == s2 {
                continue;
            }
            assert_ne!(seed_from(x, s1), seed_from(x, s2));
        }
    }

    #[test]
    fn single_bit_flips_avalanche() {
        let mut g = Generator::new(Seed(7));
        let mut total = 0u64;
        let mut samples = 0u64;
        for _ in 0..2_000 {
            let a = g.next_integer();
            let b = g.next_integer();
            let base = seed_from(a, b).0;
            for bit in 0..64 {
                total += (base ^ seed_from(a ^ (1 << bit), b).0).count_ones() as u64;
                total += (base ^ seed_from(a, b ^ (1 << bit)).0).count_ones() as u64;
                samples += 2;
            }
        }
        let mean = total as f64 / samples as f64;
        assert!((mean - 32.0).abs() < 0.25, "mean flipped bits {mean}");
    }

    #[test]
    fn uniform_mean_and_bins() {
        let mut g = Generator::new(Seed(2024));
        let mut bins = [0u64; 16];
        let mut sum = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            let u = g.next_uniform();
            sum += u;
            bins[(u * 16.0) as usize] += 1;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        for (i, &c) in bins.iter().enumerate() {
            assert!((c as i64 - 62_500).abs() <= 1_000, "bin {i}: {c}");
        }
    }

    #[test]
    fn uniform_chi_square_over_seeds() {
        const BINS: usize = 256;
        let critical = critical_0_001(BINS);
        let mut failures = 0;
        for seed in 0..8u64 {
            let mut g = Generator::new(seed_from(seed, 1));
            let mut counts = [0u64; BINS];
            for _ in 0..(1 << 16) {
                counts[(g.next_uniform() * BINS as f64) as usize] += 1;
            }
            if chi_square(&counts, (1u64 << 16) as f64 / BINS as f64) > critical {
                failures += 1;
            }
        }
        // each seed fails with probability 0.001
        assert!(failures <= 1, "{failures} seeds failed chi-square");
    }

    #[test]
    fn low_32_bits_chi_square() {
        const BINS: usize = 256;
        let mut g = Generator::new(Seed(99));
        let mut counts = [0u64; BINS];
        for _ in 0..(1 << 16) {
            let low = g.next_integer() as u32;
            counts[(low % BINS as u32) as usize] += 1;
        }
        let stat = chi_square(&counts, (1u64 << 16) as f64 / BINS as f64);
        assert!(stat < critical_0_001(BINS), "chi-square {stat}");
    }

    #[test]
    fn serial_correlation_is_small() {
        let mut g = Generator::new(Seed(31337));
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| (g.next_integer() >> 11) as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>();
        let r = cov / var;
        assert!(r.abs() < 0.01, "serial correlation {r}");
    }

    #[test]
    fn uniform_stays_in_half_open_unit_interval() {
        let mut g = Generator::new(Seed(u64::MAX));
        for _ in 0..10_000_000 {
            let u = g.next_uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Generator::new(Seed(5));
        let mut b = Generator::new(Seed(5));
        for _ in 0..1000 {
            assert_eq!(a.next_uniform().to_bits(), b.next_uniform().to_bits());
        }
    }

    #[test]
    fn peek_matches_stream() {
        let g = Generator::new(Seed(77));
        let mut h = g;
        for i in 0..20 {
            assert_eq!(g.peek_integer(i), h.next_integer());
        }
    }

    #[test]
    fn hash_bytes_distinguishes_padding() {
        assert_ne!(hash_bytes(b"a"), hash_bytes(b"a\0"));
        assert_ne!(hash_bytes(b""), hash_bytes(b"\0"));
        assert_eq!(hash_bytes(b"key-17"), hash_bytes(b"key-17"));
    }
}
