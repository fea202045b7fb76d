//! Fixed-point signed codec between real-valued readings/coefficients and
//! Paillier integer plaintexts.
//!
//! A real `v` encodes as `round(v * S) mod n` with `S` a power of two;
//! negative values land in the upper half of the residue ring, so decoding
//! splits at `n / 2`. Raw readings live at scale `S` and coefficient-weighted
//! sums at `S^2`; `scale_power` selects the divisor.

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, ToPrimitive};
use thiserror::Error;

use super::paillier::PaillierPublic;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error("encoded magnitude exceeds the plaintext budget")]
    BudgetExceeded,
}

#[derive(Debug, Clone)]
pub struct FixedPointCodec {
    scale_bits: u32,
    n: BigUint,
    half_n: BigUint,
    /// Decoded magnitudes at or above this threshold signal an overflow of
    /// the accumulation budget (key too small for the configured N, M and
    /// reading range).
    budget: BigUint,
}

pub const DEFAULT_SCALE_BITS: u32 = 16;

impl FixedPointCodec {
    pub fn new(scale_bits: u32, pk: &PaillierPublic) -> Self {
        let n = pk.n().clone();
        let half_n = &n >> 1;
        let budget = &n >> 2;
        FixedPointCodec {
            scale_bits,
            n,
            half_n,
            budget,
        }
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    /// Quantise a real to the integer grid: `round(v * S)`.
    pub fn quantize(&self, v: f64) -> Result<i64, CodecError> {
        if !v.is_finite() {
            return Err(CodecError::NotFinite(v));
        }
        let scaled = (v * self.scale()).round();
        if scaled.abs() >= i64::MAX as f64 {
            return Err(CodecError::BudgetExceeded);
        }
        Ok(scaled as i64)
    }

    /// Encode a real as a plaintext residue.
    pub fn encode(&self, v: f64) -> Result<BigUint, CodecError> {
        Ok(self.encode_int(&BigInt::from(self.quantize(v)?)))
    }

    /// Encode a signed integer as its residue mod n. This is also how signed
    /// homomorphic scale factors become nonnegative exponents.
    pub fn encode_int(&self, z: &BigInt) -> BigUint {
        let n = BigInt::from(self.n.clone());
        let mut r = z % &n;
        if r.is_negative() {
            r += &n;
        }
        r.to_biguint().unwrap()
    }

    /// Signed lift of a residue: values above `n / 2` decode negative.
    pub fn lift(&self, m: &BigUint) -> BigInt {
        if m > &self.half_n {
            BigInt::from(m.clone()) - BigInt::from(self.n.clone())
        } else {
            BigInt::from(m.clone())
        }
    }

    /// Decode a residue to a real, dividing by `S^scale_power`. Errors when
    /// the lifted magnitude breaches the accumulation budget.
    pub fn decode(&self, m: &BigUint, scale_power: u32) -> Result<f64, CodecError> {
        let lifted = self.lift(m);
        if lifted.magnitude() >= &self.budget {
            return Err(CodecError::BudgetExceeded);
        }
        let v = lifted.to_f64().ok_or(CodecError::BudgetExceeded)?;
        Ok(v / self.scale().powi(scale_power as i32))
    }

    /// Check that a worst-case accumulated magnitude
    /// `N * |phi|_max * d_max * S^2` stays under the plaintext budget.
    pub fn validate_budget(
        &self,
        n_nodes: usize,
        max_coeff: f64,
        max_reading: f64,
    ) -> Result<(), CodecError> {
        let worst = (n_nodes as f64) * max_coeff * max_reading * self.scale() * self.scale();
        if !worst.is_finite() {
            return Err(CodecError::BudgetExceeded);
        }
        // compare in the integer domain to avoid float precision traps
        let worst_int = BigUint::from(worst.ceil() as u128);
        if worst_int >= self.budget {
            return Err(CodecError::BudgetExceeded);
        }
        Ok(())
    }
}
