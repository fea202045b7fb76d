//! Deterministic seed derivation and the pinned Gaussian sampler.
//!
//! Everything random in the library flows through ChaCha20 streams whose
//! 32-byte seeds are derived by SHA-256 over a domain-separation label and the
//! caller's integer context. The exact byte layouts are normative and written
//! down in `PROTOCOL.md`; node and collector must agree on them bit for bit.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Domain label for per-node coefficient streams.
pub const PHI_DOMAIN: &str = "gridcs.phi.v1";
/// Domain label for harness sub-seed fan-out.
pub const SEED_DOMAIN: &str = "gridcs.seed.v1";

/// 32-byte seed for the stream keyed by `(domain, id)`.
pub fn stream_seed(domain: &str, id: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update(id.to_be_bytes());
    h.finalize().into()
}

/// ChaCha20 stream for `(domain, id)`.
pub fn stream_rng(domain: &str, id: u64) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(stream_seed(domain, id))
}

/// Labelled sub-seed derived from a master seed, for fanning one experiment
/// seed out to independent components (topology, trace, solver, crypto).
pub fn subseed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(SEED_DOMAIN.as_bytes());
    h.update(master.to_be_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// ChaCha20 stream for a labelled sub-seed.
pub fn subseed_rng(master: u64, label: &str) -> ChaCha20Rng {
    stream_rng(SEED_DOMAIN, subseed(master, label))
}

/// Uniform draw in `(0, 1]` from the top 53 bits of one `u64`.
#[inline]
fn unit_open_closed(r: &mut impl RngCore) -> f64 {
    ((r.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
#[inline]
fn unit_closed_open(r: &mut impl RngCore) -> f64 {
    (r.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One standard-normal draw by the Box-Muller transform.
///
/// Consumes exactly two `u64` words from the stream; the sine companion is
/// discarded so every draw has the same cost and stream position.
pub fn standard_normal(r: &mut impl RngCore) -> f64 {
    let u1 = unit_open_closed(r);
    let u2 = unit_closed_open(r);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw in `[0, 1)`.
pub fn uniform(r: &mut impl RngCore) -> f64 {
    unit_closed_open(r)
}

/// Uniform index in `[0, n)` by rejection, bias-free.
pub fn uniform_index(r: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = r.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(r: &mut impl RngCore, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = uniform_index(r, i + 1);
        xs.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subseeds_are_label_separated() {
        assert_ne!(subseed(1, "trace"), subseed(1, "topology"));
        assert_ne!(subseed(1, "trace"), subseed(2, "trace"));
        assert_eq!(subseed(7, "solver"), subseed(7, "solver"));
    }

    #[test]
    fn normal_moments() {
        let mut r = stream_rng("test.normal", 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut r);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_index_covers_range() {
        let mut r = stream_rng("test.index", 0);
        let mut seen = [false; 5];
        for _ in 0..200 {
            seen[uniform_index(&mut r, 5)] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }
}
