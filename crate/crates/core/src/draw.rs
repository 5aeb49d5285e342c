//! Seeded, order-independent random draws.
//!
//! Every stochastic decision in a simulation is keyed by what it is about
//! (seed, frame, backend, label, purpose) instead of by call order, so a
//! frame's outcome is identical whether frames run sequentially, in parallel
//! or one at a time.

use sha2::{Digest, Sha256};

/// Uniform draw in `[0, 1)` derived from SHA-256 over the seed and the key
/// parts. Parts are NUL-separated so `("ab", "c")` and `("a", "bc")` differ.
pub fn unit(seed: u64, parts: &[&str]) -> f64 {
    let word = word(seed, parts);
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[low, high)`.
pub fn uniform(seed: u64, parts: &[&str], low: f64, high: f64) -> f64 {
    low + (high - low) * unit(seed, parts)
}

/// Uniform index in `0..n`. `n` must be positive.
pub fn index(seed: u64, parts: &[&str], n: usize) -> usize {
    assert!(n > 0, "index draw over an empty range");
    ((unit(seed, parts) * n as f64) as usize).min(n - 1)
}

fn word(seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for p in parts {
        hasher.update([0u8]);
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_separated() {
        assert_eq!(unit(7, &["f-1", "aws"]), unit(7, &["f-1", "aws"]));
        assert_ne!(unit(7, &["ab", "c"]), unit(7, &["a", "bc"]));
        assert_ne!(unit(7, &["x"]), unit(8, &["x"]));
    }

    #[test]
    fn roughly_uniform() {
        let n = 20_000;
        let mean = (0..n).map(|i| unit(1, &[&i.to_string()])).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        for i in 0..1000 {
            let k = index(3, &[&i.to_string()], 4);
            assert!(k < 4);
            let u = uniform(3, &[&i.to_string()], 70.0, 90.0);
            assert!((70.0..90.0).contains(&u));
        }
    }
}
