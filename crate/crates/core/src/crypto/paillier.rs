//! Paillier cryptosystem with `g = n + 1`: probabilistic public-key
//! encryption whose ciphertext product adds plaintexts and whose ciphertext
//! exponentiation scales them.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::One;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::primes::{gen_prime, mod_inverse};
use super::{pem_unwrap, pem_wrap, CryptoError};

#[derive(Debug, Error)]
pub enum PaillierError {
    #[error("plaintext not less than the modulus")]
    PlaintextOutOfRange,
    #[error("ciphertext under a different public key")]
    KeyMismatch,
    #[error("ciphertext bytes out of range")]
    MalformedCiphertext,
}

/// Public key: modulus `n` with generator `g = n + 1` implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublic {
    n: BigUint,
    n_squared: BigUint,
    tag: u64,
}

/// Private components `lambda = lcm(p-1, q-1)` and `mu = lambda^{-1} mod n`.
#[derive(Debug, Clone)]
pub struct PaillierPrivate {
    lambda: BigUint,
    mu: BigUint,
}

#[derive(Debug, Clone)]
pub struct PaillierKeypair {
    pub public: PaillierPublic,
    pub private: PaillierPrivate,
}

/// Paillier ciphertext, tagged with a fingerprint of the key it lives under
/// so cross-key operations fail loudly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    tag: u64,
}

fn key_tag(n: &BigUint) -> u64 {
    let d = Sha256::digest(n.to_bytes_be());
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

impl PaillierPublic {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn half_n(&self) -> BigUint {
        &self.n >> 1
    }
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.value.to_bytes_be()
    }

    pub fn from_bytes(bytes: &[u8], pk: &PaillierPublic) -> Result<Self, PaillierError> {
        let value = BigUint::from_bytes_be(bytes);
        if value >= pk.n_squared {
            return Err(PaillierError::MalformedCiphertext);
        }
        Ok(Ciphertext {
            value,
            tag: pk.tag,
        })
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

/// Generate a keypair with a modulus of `bits` bits from the supplied stream.
pub fn paillier_keygen(bits: usize, rng: &mut ChaCha20Rng) -> PaillierKeypair {
    loop {
        let p = gen_prime(bits as u64 / 2, rng);
        let q = gen_prime(bits as u64 / 2, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let one = BigUint::one();
        let lambda = (&p - &one).lcm(&(&q - &one));
        // g = n + 1 makes L(g^lambda mod n^2) = lambda, so mu = lambda^{-1}
        let Some(mu) = mod_inverse(&lambda, &n) else {
            continue;
        };
        let n_squared = &n * &n;
        let tag = key_tag(&n);
        return PaillierKeypair {
            public: PaillierPublic {
                n,
                n_squared,
                tag,
            },
            private: PaillierPrivate { lambda, mu },
        };
    }
}

/// Encrypt `0 <= m < n` with fresh randomness from `rng`:
/// `c = (1 + m n) r^n mod n^2`.
pub fn paillier_encrypt(
    m: &BigUint,
    pk: &PaillierPublic,
    rng: &mut ChaCha20Rng,
) -> Result<Ciphertext, PaillierError> {
    if m >= &pk.n {
        return Err(PaillierError::PlaintextOutOfRange);
    }
    let one = BigUint::one();
    let r = loop {
        let r = rng.gen_biguint_range(&one, &pk.n);
        if r.gcd(&pk.n).is_one() {
            break r;
        }
    };
    let gm = (&one + m * &pk.n) % &pk.n_squared;
    let rn = r.modpow(&pk.n, &pk.n_squared);
    Ok(Ciphertext {
        value: (gm * rn) % &pk.n_squared,
        tag: pk.tag,
    })
}

/// Decrypt: `m = L(c^lambda mod n^2) mu mod n` with `L(u) = (u - 1) / n`.
pub fn paillier_decrypt(
    c: &Ciphertext,
    pk: &PaillierPublic,
    sk: &PaillierPrivate,
) -> Result<BigUint, PaillierError> {
    if c.tag != pk.tag {
        return Err(PaillierError::KeyMismatch);
    }
    let u = c.value.modpow(&sk.lambda, &pk.n_squared);
    let l = (&u - BigUint::one()) / &pk.n;
    Ok((l * &sk.mu) % &pk.n)
}

/// Homomorphic addition: `decrypt(hom_add(E(a), E(b))) = a + b mod n`.
pub fn hom_add(
    c1: &Ciphertext,
    c2: &Ciphertext,
    pk: &PaillierPublic,
) -> Result<Ciphertext, PaillierError> {
    if c1.tag != pk.tag || c2.tag != pk.tag {
        return Err(PaillierError::KeyMismatch);
    }
    Ok(Ciphertext {
        value: (&c1.value * &c2.value) % &pk.n_squared,
        tag: pk.tag,
    })
}

/// Homomorphic scaling by a nonnegative integer:
/// `decrypt(hom_scale(E(m), k)) = k m mod n`. Signed scalars are handled by
/// the fixed-point codec's residue encoding, never by inverse exponentiation.
pub fn hom_scale(
    c: &Ciphertext,
    k: &BigUint,
    pk: &PaillierPublic,
) -> Result<Ciphertext, PaillierError> {
    if c.tag != pk.tag {
        return Err(PaillierError::KeyMismatch);
    }
    Ok(Ciphertext {
        value: c.value.modpow(k, &pk.n_squared),
        tag: pk.tag,
    })
}

/// Neutral element for homomorphic accumulation, `E(0)` with unit randomness.
pub fn hom_one(pk: &PaillierPublic) -> Ciphertext {
    Ciphertext {
        value: BigUint::one(),
        tag: pk.tag,
    }
}

#[derive(Serialize, Deserialize)]
struct PaillierKeyFile {
    n: String,
    lambda: String,
    mu: String,
}

impl PaillierKeypair {
    pub fn to_pem(&self) -> String {
        let f = PaillierKeyFile {
            n: self.public.n.to_str_radix(16),
            lambda: self.private.lambda.to_str_radix(16),
            mu: self.private.mu.to_str_radix(16),
        };
        pem_wrap(
            "PAILLIER PRIVATE KEY",
            serde_json::to_string(&f).unwrap().as_bytes(),
        )
    }

    pub fn from_pem(text: &str) -> Result<Self, CryptoError> {
        let body = pem_unwrap("PAILLIER PRIVATE KEY", text)?;
        let f: PaillierKeyFile = serde_json::from_slice(&body)
            .map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        let parse = |s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 16)
                .ok_or_else(|| CryptoError::KeyFile("bad integer".into()))
        };
        let n = parse(&f.n)?;
        let n_squared = &n * &n;
        let tag = key_tag(&n);
        Ok(PaillierKeypair {
            public: PaillierPublic {
                n,
                n_squared,
                tag,
            },
            private: PaillierPrivate {
                lambda: parse(&f.lambda)?,
                mu: parse(&f.mu)?,
            },
        })
    }
}

impl PaillierPublic {
    pub fn to_pem(&self) -> String {
        pem_wrap("PAILLIER PUBLIC KEY", self.n.to_str_radix(16).as_bytes())
    }

    pub fn from_pem(text: &str) -> Result<Self, CryptoError> {
        let body = pem_unwrap("PAILLIER PUBLIC KEY", text)?;
        let s = String::from_utf8(body).map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        let n = BigUint::parse_bytes(s.as_bytes(), 16)
            .ok_or_else(|| CryptoError::KeyFile("bad integer".into()))?;
        let n_squared = &n * &n;
        let tag = key_tag(&n);
        Ok(PaillierPublic {
            n,
            n_squared,
            tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn test_keys() -> PaillierKeypair {
        let mut rng = seed::stream_rng("test.paillier", 0);
        paillier_keygen(512, &mut rng)
    }

    #[test]
    fn roundtrip_boundaries() {
        let kp = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 1);
        for m in [
            BigUint::ZERO,
            BigUint::one(),
            kp.public.n() - BigUint::one(),
        ] {
            let c = paillier_encrypt(&m, &kp.public, &mut rng).unwrap();
            assert_eq!(paillier_decrypt(&c, &kp.public, &kp.private).unwrap(), m);
        }
        assert!(paillier_encrypt(kp.public.n(), &kp.public, &mut rng).is_err());
    }

    #[test]
    fn roundtrip_random_plaintexts() {
        let kp = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 2);
        for _ in 0..100 {
            use num_bigint::RandBigInt;
            let m = rng.gen_biguint_below(kp.public.n());
            let c = paillier_encrypt(&m, &kp.public, &mut rng).unwrap();
            assert_eq!(paillier_decrypt(&c, &kp.public, &kp.private).unwrap(), m);
        }
    }

    #[test]
    fn additive_homomorphism() {
        let kp = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 3);
        let c2 = paillier_encrypt(&BigUint::from(2u32), &kp.public, &mut rng).unwrap();
        let c3 = paillier_encrypt(&BigUint::from(3u32), &kp.public, &mut rng).unwrap();
        let sum = hom_add(&c2, &c3, &kp.public).unwrap();
        assert_eq!(
            paillier_decrypt(&sum, &kp.public, &kp.private).unwrap(),
            BigUint::from(5u32)
        );
    }

    #[test]
    fn scale_identity_and_weighted_pair() {
        let kp = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 4);
        let c = paillier_encrypt(&BigUint::from(9u32), &kp.public, &mut rng).unwrap();
        let s = hom_scale(&c, &BigUint::one(), &kp.public).unwrap();
        assert_eq!(
            paillier_decrypt(&s, &kp.public, &kp.private).unwrap(),
            BigUint::from(9u32)
        );

        // (phi1, m1, phi2, m2) = (3, 4, 5, 6) -> 42
        let c1 = paillier_encrypt(&BigUint::from(4u32), &kp.public, &mut rng).unwrap();
        let c2 = paillier_encrypt(&BigUint::from(6u32), &kp.public, &mut rng).unwrap();
        let t = hom_add(
            &hom_scale(&c1, &BigUint::from(3u32), &kp.public).unwrap(),
            &hom_scale(&c2, &BigUint::from(5u32), &kp.public).unwrap(),
            &kp.public,
        )
        .unwrap();
        assert_eq!(
            paillier_decrypt(&t, &kp.public, &kp.private).unwrap(),
            BigUint::from(42u32)
        );
    }

    #[test]
    fn probabilistic_encryption_differs() {
        let kp = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 5);
        let m = BigUint::from(77u32);
        let a = paillier_encrypt(&m, &kp.public, &mut rng).unwrap();
        let b = paillier_encrypt(&m, &kp.public, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn cross_key_operations_fail() {
        let kp1 = test_keys();
        let mut rng = seed::stream_rng("test.paillier", 6);
        let kp2 = paillier_keygen(512, &mut rng);
        let c1 = paillier_encrypt(&BigUint::one(), &kp1.public, &mut rng).unwrap();
        let c2 = paillier_encrypt(&BigUint::one(), &kp2.public, &mut rng).unwrap();
        assert!(hom_add(&c1, &c2, &kp1.public).is_err());
        assert!(paillier_decrypt(&c1, &kp2.public, &kp2.private).is_err());
    }

    #[test]
    fn pem_roundtrip() {
        let kp = test_keys();
        let text = kp.to_pem();
        let back = PaillierKeypair::from_pem(&text).unwrap();
        assert_eq!(back.public.n(), kp.public.n());
        let pub_text = kp.public.to_pem();
        let pub_back = PaillierPublic::from_pem(&pub_text).unwrap();
        assert_eq!(pub_back, kp.public);
    }
}
