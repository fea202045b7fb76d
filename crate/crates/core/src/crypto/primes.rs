//! Probable-prime generation on top of Miller-Rabin.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::One;
use rand_chacha::ChaCha20Rng;

const MILLER_RABIN_ROUNDS: usize = 32;
const SMALL_PRIMES: [u32; 12] = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41];

pub fn is_probable_prime(n: &BigUint, rng: &mut ChaCha20Rng) -> bool {
    let one = BigUint::one();
    let two = &one + &one;
    if n < &two {
        return false;
    }
    if n == &two {
        return true;
    }
    if n.is_even() {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p) == BigUint::ZERO {
            return false;
        }
    }
    // n - 1 = 2^s * d with d odd
    let n_minus_one = n - &one;
    let mut d = n_minus_one.clone();
    let mut s = 0u32;
    while d.is_even() {
        d >>= 1;
        s += 1;
    }
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue 'witness;
        }
        for _ in 0..s - 1 {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random probable prime with the top bit set, so products of two have the
/// intended modulus size.
pub fn gen_prime(bits: u64, rng: &mut ChaCha20Rng) -> BigUint {
    loop {
        let mut cand = rng.gen_biguint(bits);
        cand |= BigUint::one();
        cand |= BigUint::one() << (bits - 1);
        if is_probable_prime(&cand, rng) {
            return cand;
        }
    }
}

/// Modular inverse via the extended Euclid algorithm; `None` when not coprime.
pub fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let a = BigInt::from(a.clone());
    let m = BigInt::from(modulus.clone());
    let e = a.extended_gcd(&m);
    if !e.gcd.is_one() {
        return None;
    }
    let mut x = e.x % &m;
    if x < BigInt::ZERO {
        x += &m;
    }
    x.to_biguint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use num_traits::Num;

    #[test]
    fn known_primes_and_composites() {
        let mut rng = seed::stream_rng("test.primes", 0);
        for p in [2u32, 3, 5, 7, 97, 65537] {
            assert!(is_probable_prime(&BigUint::from(p), &mut rng), "{p}");
        }
        for c in [1u32, 4, 100, 561, 65535] {
            assert!(!is_probable_prime(&BigUint::from(c), &mut rng), "{c}");
        }
        // carmichael number 341550071728321 is composite
        let carm = BigUint::from_str_radix("341550071728321", 10).unwrap();
        assert!(!is_probable_prime(&carm, &mut rng));
    }

    #[test]
    fn generated_primes_have_requested_size() {
        let mut rng = seed::stream_rng("test.primes", 1);
        let p = gen_prime(128, &mut rng);
        assert_eq!(p.bits(), 128);
        assert!(is_probable_prime(&p, &mut rng));
    }

    #[test]
    fn inverse_multiplies_to_one() {
        let m = BigUint::from(101u32);
        let a = BigUint::from(37u32);
        let inv = mod_inverse(&a, &m).unwrap();
        assert_eq!((a * inv) % m, BigUint::one());
        assert!(mod_inverse(&BigUint::from(4u32), &BigUint::from(8u32)).is_none());
    }
}
