//! Orthonormal multi-level Haar synthesis basis and switching permutations.
//!
//! The recovery dictionary is built from two pieces: an `n x n` Haar synthesis
//! matrix whose columns are ordered coarsest-first, and the permutation that
//! sorts a reading vector ascending. Permutations are kept as index maps and
//! applied by row shuffling, never materialised as dense matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveletError {
    #[error("signal length {n} is not a power of two")]
    NotPowerOfTwo { n: usize },
    #[error("{levels} levels exceed log2({n}) = {max}")]
    TooManyLevels { levels: usize, n: usize, max: usize },
    #[error("length mismatch: permutation has {perm} entries, vector has {vec}")]
    LengthMismatch { perm: usize, vec: usize },
}

/// Orthonormal multi-level Haar wavelet basis.
///
/// `synthesis` maps coefficient vectors (coarsest block first) to signals of
/// length `n`; its transpose is the analysis operator. `signal_len` remembers
/// the pre-padding length when the basis was built for a non-power-of-two
/// signal.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    n: usize,
    signal_len: usize,
    levels: usize,
    synthesis: DMatrix<f64>,
}

/// Multi-level Haar synthesis basis on `n` points (`n` a power of two).
pub fn haar_basis(n: usize, levels: usize) -> Result<WaveletBasis, WaveletError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(WaveletError::NotPowerOfTwo { n });
    }
    let max = n.trailing_zeros() as usize;
    if levels > max || levels == 0 {
        return Err(WaveletError::TooManyLevels { levels, n, max });
    }
    // Build the analysis operator by iterating the orthonormal pairwise step
    // on the approximation rows; synthesis is its transpose. After the loop
    // the row layout is [a_L | d_L | d_{L-1} | ... | d_1], coarsest first.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut analysis = DMatrix::<f64>::identity(n, n);
    let mut cur = n;
    for _ in 0..levels {
        let half = cur / 2;
        let block = analysis.rows(0, cur).into_owned();
        for i in 0..half {
            let sum = (block.row(2 * i) + block.row(2 * i + 1)) * s;
            let diff = (block.row(2 * i) - block.row(2 * i + 1)) * s;
            analysis.set_row(i, &sum);
            analysis.set_row(half + i, &diff);
        }
        cur = half;
    }
    Ok(WaveletBasis {
        n,
        signal_len: n,
        levels,
        synthesis: analysis.transpose(),
    })
}

/// Basis sized for a signal of arbitrary length: pads to the next power of
/// two and caps the level count (default cap 7).
pub fn basis_for_signal(signal_len: usize, level_cap: usize) -> Result<WaveletBasis, WaveletError> {
    let n = signal_len.max(2).next_power_of_two();
    let levels = (n.trailing_zeros() as usize).min(level_cap.max(1));
    let mut b = haar_basis(n, levels)?;
    b.signal_len = signal_len;
    Ok(b)
}

impl WaveletBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn synthesis_matrix(&self) -> &DMatrix<f64> {
        &self.synthesis
    }

    /// Pad a signal to length `n` by replicating its last value.
    pub fn pad(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        let last = *v.last().expect("non-empty signal");
        for i in 0..self.n {
            out[i] = if i < v.len() { v[i] } else { last };
        }
        out
    }

    /// Analysis coefficients of a padded signal.
    pub fn analyze(&self, padded: &DVector<f64>) -> DVector<f64> {
        self.synthesis.transpose() * padded
    }

    /// Synthesize a padded signal from coefficients.
    pub fn synthesize(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.synthesis * x
    }
}

/// Permutation stored as an index map: applying it yields `out[k] = v[order[k]]`.
///
/// The switching permutation `H` of a reading vector is the instance whose
/// application sorts the vector ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            order: (0..n).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Self {
        debug_assert!(is_permutation(&order));
        Permutation { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// Row-permute a matrix: `out.row(k) = m.row(order[k])`. This realises
    /// left-multiplication by the permutation matrix.
    pub fn permute_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (k, &src) in self.order.iter().enumerate() {
            out.set_row(k, &m.row(src));
        }
        out
    }

    /// Compose as matrix product: `(self * other) v = self (other v)`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.len(), other.len());
        let order = self.order.iter().map(|&k| other.order[k]).collect();
        Permutation { order }
    }
}

fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    for &o in order {
        if o >= order.len() || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

/// Switching permutation of `d`: applying it sorts `d` ascending, ties broken
/// by original index (stable).
pub fn switching_permutation(d: &[f64]) -> Permutation {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    Permutation { order }
}

/// Apply a permutation to a vector.
pub fn apply_perm(p: &Permutation, v: &[f64]) -> Result<Vec<f64>, WaveletError> {
    if p.len() != v.len() {
        return Err(WaveletError::LengthMismatch {
            perm: p.len(),
            vec: v.len(),
        });
    }
    Ok(p.order.iter().map(|&k| v[k]).collect())
}

/// Inverse permutation.
pub fn invert_perm(p: &Permutation) -> Permutation {
    let mut inv = vec![0usize; p.len()];
    for (k, &o) in p.order.iter().enumerate() {
        inv[o] = k;
    }
    Permutation { order: inv }
}
