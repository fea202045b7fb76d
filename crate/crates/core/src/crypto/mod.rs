//! Cryptographic primitives for the secure collection layer: the Paillier
//! cryptosystem with its additive homomorphism, a fixed-point signed codec
//! bridging real-valued readings to integer plaintexts, the truncated packet
//! digest, and per-node signing keys.
//!
//! Byte layouts (digest input, signature message) are pinned in
//! `PROTOCOL.md`. Key material serialises to PEM-like text blocks.

mod fixed;
mod paillier;
mod primes;
mod rsa;

pub use fixed::{CodecError, FixedPointCodec, DEFAULT_SCALE_BITS};
pub use paillier::{
    hom_add, hom_one, hom_scale, paillier_decrypt, paillier_encrypt, paillier_keygen, Ciphertext,
    PaillierError, PaillierKeypair, PaillierPrivate, PaillierPublic,
};
pub use rsa::{rsa_keygen, sign, verify, Signature, SigningKeypair, VerifyKey};

use std::collections::BTreeMap;

use sha1::{Digest as Sha1Digest, Sha1};
use thiserror::Error;

use crate::seed;
use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("malformed key file: {0}")]
    KeyFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// First 64 bits of the SHA-1 hash of the input.
pub fn digest64(bytes: &[u8]) -> [u8; 8] {
    let d = Sha1::digest(bytes);
    d[..8].try_into().unwrap()
}

/// Key-size profile. The test profile keeps rounds fast; the default profile
/// is the deployment shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CryptoProfile {
    pub paillier_bits: usize,
    pub rsa_bits: usize,
}

impl CryptoProfile {
    pub const TEST_512: CryptoProfile = CryptoProfile {
        paillier_bits: 512,
        rsa_bits: 512,
    };
    pub const DEFAULT_2048: CryptoProfile = CryptoProfile {
        paillier_bits: 2048,
        rsa_bits: 2048,
    };

    pub fn parse(name: &str) -> Option<CryptoProfile> {
        match name {
            "test-512" => Some(Self::TEST_512),
            "default-2048" => Some(Self::DEFAULT_2048),
            _ => None,
        }
    }
}

/// Every signing keypair in the network, keyed by node id.
#[derive(Debug, Clone)]
pub struct NodeKeys {
    keys: BTreeMap<NodeId, SigningKeypair>,
}

/// The published verify-key directory **K**.
#[derive(Debug, Clone)]
pub struct KeyDirectory {
    keys: BTreeMap<NodeId, VerifyKey>,
}

impl NodeKeys {
    pub fn get(&self, id: NodeId) -> Option<&SigningKeypair> {
        self.keys.get(&id)
    }

    pub fn directory(&self) -> KeyDirectory {
        KeyDirectory {
            keys: self
                .keys
                .iter()
                .map(|(&id, kp)| (id, kp.public.clone()))
                .collect(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.keys.keys().copied()
    }
}

impl KeyDirectory {
    pub fn get(&self, id: NodeId) -> Option<&VerifyKey> {
        self.keys.get(&id)
    }
}

/// Generate the collector's Paillier keypair and one signing keypair per
/// node, all from one labelled seed.
pub fn keygen_network(
    ids: &[NodeId],
    profile: CryptoProfile,
    crypto_seed: u64,
) -> (PaillierKeypair, NodeKeys) {
    let mut rng = seed::subseed_rng(crypto_seed, "paillier");
    let pk = paillier_keygen(profile.paillier_bits, &mut rng);
    let mut keys = BTreeMap::new();
    for &id in ids {
        let mut r = seed::subseed_rng(crypto_seed, &format!("rsa.{id}"));
        keys.insert(id, rsa_keygen(profile.rsa_bits, &mut r));
    }
    (pk, NodeKeys { keys })
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn from_hex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok())
        .collect()
}

/// Wrap a serialised key in a PEM-like armor block.
pub(crate) fn pem_wrap(label: &str, body: &[u8]) -> String {
    let hex = to_hex(body);
    let mut out = format!("-----BEGIN GRIDCS {label}-----\n");
    for chunk in hex.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).unwrap());
        out.push('\n');
    }
    out.push_str(&format!("-----END GRIDCS {label}-----\n"));
    out
}

pub(crate) fn pem_unwrap(label: &str, text: &str) -> Result<Vec<u8>, CryptoError> {
    let begin = format!("-----BEGIN GRIDCS {label}-----");
    let end = format!("-----END GRIDCS {label}-----");
    let mut inside = false;
    let mut hex = String::new();
    for line in text.lines() {
        let line = line.trim();
        if line == begin {
            inside = true;
        } else if line == end {
            inside = false;
        } else if inside {
            hex.push_str(line);
        }
    }
    if hex.is_empty() {
        return Err(CryptoError::KeyFile(format!("no {label} block found")));
    }
    from_hex(&hex).ok_or_else(|| CryptoError::KeyFile("invalid hex".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest64_of_empty_matches_sha1_vector() {
        assert_eq!(
            digest64(b""),
            [0xda, 0x39, 0xa3, 0xee, 0x5e, 0x6b, 0x4b, 0x0d]
        );
    }

    #[test]
    fn digest64_is_deterministic() {
        assert_eq!(digest64(b"abc"), digest64(b"abc"));
        assert_ne!(digest64(b"abc"), digest64(b"abd"));
    }

    #[test]
    fn one_bit_flip_avalanches() {
        let mut diff_bits = 0usize;
        let trials = 1000;
        for i in 0..trials {
            let base = [i as u8, (i >> 8) as u8, 7, 9];
            let mut flipped = base;
            flipped[0] ^= 1;
            let (a, b) = (digest64(&base), digest64(&flipped));
            diff_bits += a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x ^ y).count_ones() as usize)
                .sum::<usize>();
        }
        let avg = diff_bits as f64 / trials as f64;
        // 64 output bits: expect roughly half to flip
        assert!((24.0..40.0).contains(&avg), "avg flipped bits {avg}");
    }

    #[test]
    fn hex_roundtrip() {
        let data = [0u8, 255, 16, 32, 200];
        assert_eq!(from_hex(&to_hex(&data)).unwrap(), data);
        assert!(from_hex("abc").is_none());
    }

    #[test]
    fn pem_roundtrip() {
        let body = vec![1u8; 100];
        let text = pem_wrap("TEST KEY", &body);
        assert_eq!(pem_unwrap("TEST KEY", &text).unwrap(), body);
        assert!(pem_unwrap("OTHER", &text).is_err());
    }

    #[test]
    fn network_keygen_is_seed_deterministic() {
        let ids = [1u32, 2, 3];
        let (pk1, nk1) = keygen_network(&ids, CryptoProfile::TEST_512, 42);
        let (pk2, nk2) = keygen_network(&ids, CryptoProfile::TEST_512, 42);
        assert_eq!(pk1.public.n(), pk2.public.n());
        assert_eq!(
            nk1.get(2).unwrap().public.fingerprint(),
            nk2.get(2).unwrap().public.fingerprint()
        );
        let (pk3, _) = keygen_network(&ids, CryptoProfile::TEST_512, 43);
        assert_ne!(pk1.public.n(), pk3.public.n());
    }
}
