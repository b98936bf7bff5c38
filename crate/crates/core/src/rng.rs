//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, element, counter)`, so a
//! kernel dispatched in any order over any number of workers produces the
//! same values as a sequential host loop.

use std::f32::consts::TAU;

/// Independent sub-streams so different consumers of one seed never share
/// draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    InitPosition = 1,
    Brownian = 2,
    PottsInit = 3,
    PottsProposal = 4,
    PottsAccept = 5,
    NBodyInit = 6,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64 random bits for the given coordinates.
#[inline]
pub fn hash(seed: u64, stream: Stream, element: u64, counter: u64) -> u64 {
    let mut x = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    x = mix64(x ^ (stream as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    x = mix64(x ^ element.wrapping_mul(0xa076_1d64_78bd_642f));
    mix64(x ^ counter.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

/// Uniform in `[0, 1)` with 24 bits of resolution.
#[inline]
pub fn uniform(seed: u64, stream: Stream, element: u64, counter: u64) -> f32 {
    (hash(seed, stream, element, counter) >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
}

/// Uniform integer in `[0, bound)`.
#[inline]
pub fn uniform_below(seed: u64, stream: Stream, element: u64, counter: u64, bound: u32) -> u32 {
    debug_assert!(bound > 0);
    // Multiply-shift keeps the bias below 2^-32 for the bounds used here.
    (((hash(seed, stream, element, counter) >> 32) * bound as u64) >> 32) as u32
}

/// Standard normal draw via Box–Muller over two counter-derived uniforms.
#[inline]
pub fn normal(seed: u64, stream: Stream, element: u64, counter: u64) -> f32 {
    let bits = hash(seed, stream, element, counter);
    // u1 in (0, 1] so the logarithm stays finite.
    let u1 = ((bits >> 40) + 1) as f32 * (1.0 / (1u64 << 24) as f32);
    let u2 = ((bits >> 8) & 0xff_ffff) as f32 * (1.0 / (1u64 << 24) as f32);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_their_coordinates() {
        assert_eq!(hash(7, Stream::Brownian, 3, 9), hash(7, Stream::Brownian, 3, 9));
        assert_ne!(hash(7, Stream::Brownian, 3, 9), hash(7, Stream::Brownian, 3, 10));
        assert_ne!(hash(7, Stream::Brownian, 3, 9), hash(7, Stream::InitPosition, 3, 9));
        assert_ne!(hash(7, Stream::Brownian, 3, 9), hash(8, Stream::Brownian, 3, 9));
    }

    #[test]
    fn uniform_moments() {
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for i in 0..n {
            let u = uniform(1, Stream::InitPosition, i, 0) as f64;
            assert!((0.0..1.0).contains(&u));
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.003, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.002, "var {var}");
    }

    #[test]
    fn normal_moments() {
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for i in 0..n {
            let z = normal(42, Stream::Brownian, i, 5) as f64;
            assert!(z.is_finite());
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_below_stays_in_range() {
        let mut seen = [0u32; 9];
        for i in 0..9000 {
            let v = uniform_below(3, Stream::PottsProposal, i, 0, 9);
            seen[v as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800), "{seen:?}");
    }
}
