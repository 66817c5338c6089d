//! Counter-based splittable random number streams.
//!
//! Sampling uses the Philox 4x32-10 generator (Salmon et al., "Parallel
//! random numbers: as easy as 1, 2, 3"). Every stream is addressed by
//! `(master seed, replicate, level, sample index)` and every draw within
//! a stream by its index, so results are a pure function of those
//! coordinates and independent of scheduling or worker count. Normal
//! variates are produced by inverse-CDF transform for the same reason.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::LazyLock;

static STD_NORMAL: LazyLock<Normal> = LazyLock::new(|| Normal::new(0.0, 1.0).unwrap());

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One Philox 4x32-10 block: 128-bit counter, 64-bit key, 128-bit output.
pub fn philox4x32(mut ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (mut k0, mut k1) = (key[0], key[1]);
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0];
        k0 = k0.wrapping_add(PHILOX_W0);
        k1 = k1.wrapping_add(PHILOX_W1);
    }
    ctr
}

/// A stream of random draws addressed by `(seed, replicate, level, sample)`.
///
/// Streams are stateless: the `i`-th draw is a pure function of the
/// address and `i`, so any subset may be generated in any order.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    key: [u32; 2],
    // counter words 1..3: sample index (lo, hi) and replicate|level
    tag: [u32; 3],
}

impl Stream {
    pub fn new(master_seed: u64, replicate: u32, level: u32, sample: u64) -> Stream {
        assert!(level < 1 << 16, "level out of range");
        assert!(replicate < 1 << 16, "replicate out of range");
        Stream {
            key: [master_seed as u32, (master_seed >> 32) as u32],
            tag: [
                sample as u32,
                (sample >> 32) as u32,
                (replicate << 16) | level,
            ],
        }
    }

    #[inline]
    fn block(&self, i: u32) -> [u32; 4] {
        philox4x32([i, self.tag[0], self.tag[1], self.tag[2]], self.key)
    }

    /// The `i`-th uniform draw on the open interval (0, 1), with 53
    /// significant bits.
    pub fn uniform(&self, i: u32) -> f64 {
        let b = self.block(i / 2);
        let (w0, w1) = if i % 2 == 0 { (b[0], b[1]) } else { (b[2], b[3]) };
        let x = ((w0 as u64) << 32) | w1 as u64;
        ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// The `i`-th standard normal draw (inverse-CDF transform).
    pub fn standard_normal(&self, i: u32) -> f64 {
        STD_NORMAL.inverse_cdf(self.uniform(i))
    }
}

/// Standard normal quantile, used for confidence intervals.
pub fn normal_quantile(p: f64) -> f64 {
    STD_NORMAL.inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        // Reference vectors from the Random123 distribution (kat_vectors).
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32(
                [0xffff_ffff, 0xffff_ffff, 0xffff_ffff, 0xffff_ffff],
                [0xffff_ffff, 0xffff_ffff]
            ),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = Stream::new(42, 0, 1, 7);
        let b = Stream::new(42, 0, 1, 7);
        let c = Stream::new(42, 0, 1, 8);
        let d = Stream::new(42, 1, 1, 7);
        let e = Stream::new(43, 0, 1, 7);
        for i in 0..16 {
            assert_eq!(a.uniform(i), b.uniform(i));
            assert_ne!(a.uniform(i), c.uniform(i));
            assert_ne!(a.uniform(i), d.uniform(i));
            assert_ne!(a.uniform(i), e.uniform(i));
        }
    }

    #[test]
    fn uniforms_lie_in_open_unit_interval() {
        let s = Stream::new(123, 3, 2, 99);
        for i in 0..10_000 {
            let u = s.uniform(i);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn uniform_moments() {
        let s = Stream::new(2024, 0, 0, 0);
        let n = 200_000u32;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for i in 0..n {
            let u = s.uniform(i);
            sum += u;
            sumsq += u * u;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // CLT tolerance ~ 4 sigma
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0f64 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 2e-3);
    }

    #[test]
    fn normal_quantiles_match_textbook_values() {
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-8);
        assert!((normal_quantile(0.995) - 2.5758293035489004).abs() < 1e-8);
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let s = Stream::new(7, 0, 0, 1);
        let n = 100_000u32;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for i in 0..n {
            let z = s.standard_normal(i);
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
