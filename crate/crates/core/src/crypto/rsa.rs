//! Per-node RSA signatures over `(digest64, timestamp)`.
//!
//! The signing message is the 8-byte digest followed by the 8-byte big-endian
//! timestamp, interpreted as a big-endian integer; signatures are the
//! textbook `m^d mod n`. Verification never panics: malformed or oversized
//! signature bytes simply verify false.

use num_bigint::BigUint;
use num_traits::One;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::primes::{gen_prime, mod_inverse};
use super::{pem_unwrap, pem_wrap, CryptoError};

const PUBLIC_EXPONENT: u32 = 65537;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyKey {
    n: BigUint,
    e: BigUint,
}

#[derive(Debug, Clone)]
pub struct SigningKeypair {
    pub public: VerifyKey,
    d: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature(pub Vec<u8>);

pub fn rsa_keygen(bits: usize, rng: &mut ChaCha20Rng) -> SigningKeypair {
    let e = BigUint::from(PUBLIC_EXPONENT);
    loop {
        let p = gen_prime(bits as u64 / 2, rng);
        let q = gen_prime(bits as u64 / 2, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let phi = (&p - BigUint::one()) * (&q - BigUint::one());
        let Some(d) = mod_inverse(&e, &phi) else {
            continue;
        };
        return SigningKeypair {
            public: VerifyKey { n, e },
            d,
        };
    }
}

fn message_int(digest: &[u8; 8], timestamp: u64) -> BigUint {
    let mut msg = [0u8; 16];
    msg[..8].copy_from_slice(digest);
    msg[8..].copy_from_slice(&timestamp.to_be_bytes());
    BigUint::from_bytes_be(&msg)
}

/// Sign `(digest, timestamp)` with the node's private key.
pub fn sign(digest: &[u8; 8], timestamp: u64, key: &SigningKeypair) -> Signature {
    let m = message_int(digest, timestamp);
    Signature(m.modpow(&key.d, &key.public.n).to_bytes_be())
}

/// Verify a signature over `(digest, timestamp)`; false on any mismatch or
/// malformed input.
pub fn verify(sig: &Signature, digest: &[u8; 8], timestamp: u64, key: &VerifyKey) -> bool {
    let s = BigUint::from_bytes_be(&sig.0);
    if s >= key.n {
        return false;
    }
    s.modpow(&key.e, &key.n) == message_int(digest, timestamp)
}

impl VerifyKey {
    /// Short identifier for logs and determinism checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.n.to_bytes_be());
        h.update(self.e.to_bytes_be());
        let d = h.finalize();
        u64::from_be_bytes(d[..8].try_into().unwrap())
    }
}

#[derive(Serialize, Deserialize)]
struct SigningKeyFile {
    n: String,
    e: String,
    d: String,
}

impl SigningKeypair {
    pub fn to_pem(&self) -> String {
        let f = SigningKeyFile {
            n: self.public.n.to_str_radix(16),
            e: self.public.e.to_str_radix(16),
            d: self.d.to_str_radix(16),
        };
        pem_wrap(
            "SIGNING PRIVATE KEY",
            serde_json::to_string(&f).unwrap().as_bytes(),
        )
    }

    pub fn from_pem(text: &str) -> Result<Self, CryptoError> {
        let body = pem_unwrap("SIGNING PRIVATE KEY", text)?;
        let f: SigningKeyFile =
            serde_json::from_slice(&body).map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        let parse = |s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 16)
                .ok_or_else(|| CryptoError::KeyFile("bad integer".into()))
        };
        Ok(SigningKeypair {
            public: VerifyKey {
                n: parse(&f.n)?,
                e: parse(&f.e)?,
            },
            d: parse(&f.d)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn keypair(tag: u64) -> SigningKeypair {
        let mut rng = seed::stream_rng("test.rsa", tag);
        rsa_keygen(512, &mut rng)
    }

    #[test]
    fn sign_verify_roundtrip() {
        let kp = keypair(0);
        let digest = [1u8, 2, 3, 4, 5, 6, 7, 8];
        let sig = sign(&digest, 42, &kp);
        assert!(verify(&sig, &digest, 42, &kp.public));
    }

    #[test]
    fn wrong_key_fails() {
        let kp1 = keypair(1);
        let kp2 = keypair(2);
        let digest = [9u8; 8];
        let sig = sign(&digest, 7, &kp1);
        assert!(!verify(&sig, &digest, 7, &kp2.public));
    }

    #[test]
    fn timestamp_binding() {
        let kp = keypair(3);
        let digest = [5u8; 8];
        let sig = sign(&digest, 100, &kp);
        assert!(!verify(&sig, &digest, 101, &kp.public));
    }

    #[test]
    fn malformed_signature_is_false_not_panic() {
        let kp = keypair(4);
        let digest = [0u8; 8];
        assert!(!verify(&Signature(vec![]), &digest, 1, &kp.public));
        assert!(!verify(&Signature(vec![0xff; 200]), &digest, 1, &kp.public));
    }

    #[test]
    fn pem_roundtrip() {
        let kp = keypair(5);
        let text = kp.to_pem();
        let back = SigningKeypair::from_pem(&text).unwrap();
        let digest = [3u8; 8];
        let sig = sign(&digest, 9, &back);
        assert!(verify(&sig, &digest, 9, &kp.public));
    }
}
