//! Universal hashing for the local-hashing protocols (BLH, OLH).
//!
//! Each user draws a fresh pair `(a, b)` and maps the domain through
//! `((a * v + b) mod P) mod g`, where `P` is a fixed prime larger than the
//! domain. The pair travels in clear next to the perturbed bucket.

use crate::error::{Error, Result};

/// Lower bound on the hashing prime, independent of the domain size.
pub const MIN_PRIME_FLOOR: u64 = 1 << 16;

/// Smallest prime strictly greater than `max(d, 2^16)`.
pub fn prime_for_domain(d: usize) -> u64 {
    let mut candidate = (d as u64).max(MIN_PRIME_FLOOR) + 1;
    while !is_prime(candidate) {
        candidate += 1;
    }
    candidate
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut f = 3u64;
    while f * f <= n {
        if n % f == 0 {
            return false;
        }
        f += 2;
    }
    true
}

/// `((a * v + b) mod prime) mod g`, evaluated in 128-bit arithmetic.
pub fn hash_universal(a: u64, b: u64, prime: u64, g: u32, v: u64) -> Result<u32> {
    if prime < 2 || !is_prime(prime) {
        return Err(Error::param(format!("hash modulus {prime} is not prime")));
    }
    if v >= prime {
        return Err(Error::param(format!(
            "value {v} not below the hash prime {prime}"
        )));
    }
    if a == 0 || a >= prime {
        return Err(Error::param(format!(
            "hash multiplier a={a} must lie in 1..{prime}"
        )));
    }
    if b >= prime {
        return Err(Error::param(format!(
            "hash offset b={b} must lie in 0..{prime}"
        )));
    }
    if g < 2 {
        return Err(Error::param(format!("hash range g={g} must be at least 2")));
    }
    Ok(hash_unchecked(a, b, prime, g, v))
}

#[inline]
pub(crate) fn hash_unchecked(a: u64, b: u64, prime: u64, g: u32, v: u64) -> u32 {
    let x = (a as u128 * v as u128 + b as u128) % prime as u128;
    (x % g as u128) as u32
}

/// Adds one to `counts[u]` for every domain value `u` that hashes to `bucket`.
///
/// Walks the domain incrementally, `x_{u+1} = (x_u + a) mod prime`, which
/// matches [`hash_universal`] value for value.
#[inline]
pub(crate) fn accumulate_preimage(
    a: u64,
    b: u64,
    prime: u64,
    g: u32,
    bucket: u32,
    counts: &mut [u64],
) {
    let g = g as u64;
    let bucket = bucket as u64;
    let mut x = b % prime;
    for c in counts.iter_mut() {
        if x % g == bucket {
            *c += 1;
        }
        x += a;
        if x >= prime {
            x -= prime;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn worked_examples() {
        assert_eq!(hash_universal(1, 0, 101, 2, 6).unwrap(), 0);
        assert_eq!(hash_universal(1, 1, 101, 2, 6).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(hash_universal(0, 0, 101, 2, 6).is_err());
        assert!(hash_universal(101, 0, 101, 2, 6).is_err());
        assert!(hash_universal(1, 101, 101, 2, 6).is_err());
        assert!(hash_universal(1, 0, 100, 2, 6).is_err());
        assert!(hash_universal(1, 0, 101, 1, 6).is_err());
    }

    #[test]
    fn prime_selection() {
        assert_eq!(prime_for_domain(4), 65537);
        assert_eq!(prime_for_domain(65537), 65539);
        assert!(prime_for_domain(100_000) > 100_000);
    }

    #[test]
    fn incremental_walk_matches_direct_hash() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let prime = prime_for_domain(300);
        for _ in 0..50 {
            let a = rng.gen_range(1..prime);
            let b = rng.gen_range(0..prime);
            let g = rng.gen_range(2..9u32);
            let bucket = rng.gen_range(0..g);
            let mut counts = vec![0u64; 300];
            accumulate_preimage(a, b, prime, g, bucket, &mut counts);
            for (v, &c) in counts.iter().enumerate() {
                let hit = hash_universal(a, b, prime, g, v as u64).unwrap() == bucket;
                assert_eq!(c, hit as u64);
            }
        }
    }

    #[test]
    fn bucket_distribution_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let prime = prime_for_domain(100);
        let g = 4u32;
        let draws = 100_000;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let mut hist = vec![0f64; g as usize];
        for _ in 0..draws {
            let a = rng.gen_range(1..prime);
            let b = rng.gen_range(0..prime);
            hist[hash_universal(a, b, prime, g, 37).unwrap() as usize] += 1.0;
        }
        let expected = draws as f64 / g as f64;
        let stat: f64 = hist.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new((g - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 0.001, "chi-square p-value {p_value}");
    }
}
