//! Per-node Gaussian coefficient streams and collector-side sensing matrices,
//! plus restricted-isometry and submatrix-norm estimators.
//!
//! Stream element `l` for node `id` is the `l`-th Box-Muller draw of the
//! ChaCha20 stream seeded from `(PHI_DOMAIN, id)`, scaled by `1/sqrt(m)`, so
//! a node and the collector reproduce the exact same coefficients from the id
//! alone. The derivation is pinned in `PROTOCOL.md`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::seed;
use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("duplicate node id {0} in sensing matrix")]
    DuplicateId(NodeId),
    #[error("no node ids supplied")]
    EmptyIds,
    #[error("row index must be >= 1")]
    ZeroRow,
    #[error("sparsity {k} exceeds {n} columns")]
    SparsityTooLarge { k: usize, n: usize },
    #[error("C({n},{k}) = {count} exceeds the enumeration guard of {guard}")]
    EnumerationGuard {
        n: usize,
        k: usize,
        count: u128,
        guard: u128,
    },
}

const ENUM_GUARD: u128 = 1_000_000;

/// Deterministic Gaussian coefficient: the `l`-th element (1-based) of node
/// `id`'s stream, distributed N(0, 1/m).
pub fn phi(id: NodeId, l: usize, m: usize) -> Result<f64, CoeffError> {
    if l == 0 {
        return Err(CoeffError::ZeroRow);
    }
    let mut rng = seed::stream_rng(seed::PHI_DOMAIN, id as u64);
    let mut z = 0.0;
    for _ in 0..l {
        z = seed::standard_normal(&mut rng);
    }
    Ok(z / (m as f64).sqrt())
}

/// M x N sensing matrix whose `(l, j)` entry is node `column_ids[j]`'s `l`-th
/// stream element. The matrix is a pure function of `(ids, m)` and is fixed
/// across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    m: usize,
    column_ids: Vec<NodeId>,
    entries: DMatrix<f64>,
}

pub fn assemble_sensing_matrix(ids: &[NodeId], m: usize) -> Result<SensingMatrix, CoeffError> {
    if ids.is_empty() {
        return Err(CoeffError::EmptyIds);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &id in ids {
        if !seen.insert(id) {
            return Err(CoeffError::DuplicateId(id));
        }
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut entries = DMatrix::zeros(m, ids.len());
    for (j, &id) in ids.iter().enumerate() {
        let mut rng = seed::stream_rng(seed::PHI_DOMAIN, id as u64);
        for l in 0..m {
            entries[(l, j)] = seed::standard_normal(&mut rng) * scale;
        }
    }
    Ok(SensingMatrix {
        m,
        column_ids: ids.to_vec(),
        entries,
    })
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.column_ids.len()
    }

    pub fn column_ids(&self) -> &[NodeId] {
        &self.column_ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn entry(&self, l: usize, j: usize) -> f64 {
        self.entries[(l, j)]
    }

    /// Coefficient for row `l` (0-based) and a node id; the id must be one of
    /// the matrix columns.
    pub fn coeff_for(&self, l: usize, id: NodeId) -> Option<f64> {
        let j = self.column_ids.iter().position(|&c| c == id)?;
        Some(self.entries[(l, j)])
    }

    /// `y = Phi d` with `d` in column order.
    pub fn measure(&self, d: &[f64]) -> DVector<f64> {
        &self.entries * DVector::from_column_slice(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RipMode {
    /// Enumerate every k-column support (guarded).
    Exact,
    /// Sample random unit k-sparse vectors; a lower estimate of delta_k.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipEstimate {
    pub delta: f64,
    /// True when the value came from exhaustive enumeration.
    pub exact: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > ENUM_GUARD * 1000 {
            return u128::MAX;
        }
    }
    acc
}

fn check_guard(n: usize, k: usize) -> Result<(), CoeffError> {
    let count = binomial(n, k);
    if count > ENUM_GUARD {
        return Err(CoeffError::EnumerationGuard {
            n,
            k,
            count,
            guard: ENUM_GUARD,
        });
    }
    Ok(())
}

fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance lexicographically
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn gram_extremes(a: &DMatrix<f64>, support: &[usize]) -> (f64, f64) {
    let k = support.len();
    let mut gram = DMatrix::zeros(k, k);
    for (bi, &ci) in support.iter().enumerate() {
        for (bj, &cj) in support.iter().enumerate() {
            if bj < bi {
                continue;
            }
            let v = a.column(ci).dot(&a.column(cj));
            gram[(bi, bj)] = v;
            gram[(bj, bi)] = v;
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo.max(0.0), hi.max(0.0))
}

/// Restricted-isometry constant of order `k` for `a`.
///
/// Exact mode enumerates all k-column supports and returns
/// `max(1 - sigma_min^2, sigma_max^2 - 1)`. Monte-Carlo mode returns the
/// largest `| ||Az||^2 - 1 |` seen over random unit k-sparse `z`, which is a
/// lower estimate of the true constant.
pub fn estimate_rip(a: &DMatrix<f64>, k: usize, mode: RipMode) -> Result<RipEstimate, CoeffError> {
    let n = a.ncols();
    if k > n || k == 0 {
        return Err(CoeffError::SparsityTooLarge { k, n });
    }
    match mode {
        RipMode::Exact => {
            check_guard(n, k)?;
            let mut delta = 0.0f64;
            for_each_combination(n, k, |support| {
                let (lo, hi) = gram_extremes(a, support);
                delta = delta.max(1.0 - lo).max(hi - 1.0);
            });
            Ok(RipEstimate { delta, exact: true })
        }
        RipMode::MonteCarlo { samples, seed: s } => {
            let mut rng = seed::stream_rng("gridcs.rip.mc", s);
            let mut delta = 0.0f64;
            let mut pool: Vec<usize> = (0..n).collect();
            for _ in 0..samples {
                // random support
                for i in 0..k {
                    let j = i + seed::uniform_index(&mut rng, n - i);
                    pool.swap(i, j);
                }
                let mut z = DVector::zeros(k);
                for i in 0..k {
                    z[i] = seed::standard_normal(&mut rng);
                }
                let norm = z.norm();
                if norm == 0.0 {
                    continue;
                }
                z /= norm;
                let mut az: DVector<f64> = DVector::zeros(a.nrows());
                for i in 0..k {
                    az += a.column(pool[i]) * z[i];
                }
                delta = delta.max((az.norm_squared() - 1.0).abs());
            }
            Ok(RipEstimate {
                delta,
                exact: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Exact,
    /// Greedy column selection: a lower estimate.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmatrixNorm {
    /// Largest spectral norm over k-column submatrices (exact) or the greedy
    /// lower estimate.
    pub value: f64,
    /// Spectral norm of the whole matrix, an upper bound for any k.
    pub upper_bound: f64,
    pub exact: bool,
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    // largest singular value via the Gram eigenvalues of the thinner side
    let (r, c) = (a.nrows(), a.ncols());
    let gram = if c <= r {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    gram.symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, &e| acc.max(e))
        .sqrt()
}

/// Maximum spectral norm over all `k`-column submatrices of `x`.
pub fn submatrix_norm(x: &DMatrix<f64>, k: usize, mode: NormMode) -> Result<SubmatrixNorm, CoeffError> {
    let n = x.ncols();
    if k > n || k == 0 {
        return Err(CoeffError::SparsityTooLarge { k, n });
    }
    let upper = spectral_norm(x);
    match mode {
        NormMode::Exact => {
            check_guard(n, k)?;
            let mut best = 0.0f64;
            for_each_combination(n, k, |support| {
                let (_, hi) = gram_extremes(x, support);
                best = best.max(hi);
            });
            Ok(SubmatrixNorm {
                value: best.sqrt(),
                upper_bound: upper,
                exact: true,
            })
        }
        NormMode::Greedy => {
            let mut selected: Vec<usize> = Vec::with_capacity(k);
            let mut remaining: Vec<usize> = (0..n).collect();
            for _ in 0..k {
                let mut best_col = remaining[0];
                let mut best_val = -1.0;
                for &c in &remaining {
                    let mut sup = selected.clone();
                    sup.push(c);
                    let (_, hi) = gram_extremes(x, &sup);
                    if hi > best_val {
                        best_val = hi;
                        best_col = c;
                    }
                }
                selected.push(best_col);
                remaining.retain(|&c| c != best_col);
            }
            let (_, hi) = gram_extremes(x, &selected);
            Ok(SubmatrixNorm {
                value: hi.sqrt(),
                upper_bound: upper,
                exact: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_is_deterministic() {
        let a = phi(17, 3, 38).unwrap();
        let b = phi(17, 3, 38).unwrap();
        assert_eq!(a, b);
        assert!(phi(17, 0, 38).is_err());
    }

    #[test]
    fn phi_matches_matrix_assembly() {
        let ids = [5u32, 9, 122];
        let sm = assemble_sensing_matrix(&ids, 4).unwrap();
        for (j, &id) in ids.iter().enumerate() {
            for l in 1..=4 {
                assert_eq!(sm.entry(l - 1, j), phi(id, l, 4).unwrap());
            }
        }
    }

    #[test]
    fn stream_sample_statistics() {
        // 1e5 samples across (id, l) at m = 38: mean within 3 sigma of 0,
        // variance within 5% of 1/38
        let m = 38;
        let (mut s, mut s2, mut count) = (0.0, 0.0, 0usize);
        for id in 1..=1000u32 {
            let mut rng = seed::stream_rng(seed::PHI_DOMAIN, id as u64);
            for _ in 0..100 {
                let v = seed::standard_normal(&mut rng) / (m as f64).sqrt();
                s += v;
                s2 += v * v;
                count += 1;
            }
        }
        let n = count as f64;
        let mean = s / n;
        let var = s2 / n - mean * mean;
        let sigma_mean = (1.0 / m as f64 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!((var - 1.0 / m as f64).abs() < 0.05 / m as f64, "var {var}");
    }

    #[test]
    fn distinct_ids_do_not_collide() {
        let a = assemble_sensing_matrix(&[1], 100).unwrap();
        let b = assemble_sensing_matrix(&[2], 100).unwrap();
        let matches = (0..100)
            .filter(|&l| a.entry(l, 0) == b.entry(l, 0))
            .count();
        assert_eq!(matches, 0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(assemble_sensing_matrix(&[3, 3], 2).is_err());
        assert!(assemble_sensing_matrix(&[], 2).is_err());
    }

    #[test]
    fn expected_shape() {
        let ids: Vec<NodeId> = (1..=128).collect();
        let sm = assemble_sensing_matrix(&ids, 38).unwrap();
        assert_eq!((sm.rows(), sm.cols()), (38, 128));
    }

    #[test]
    fn single_column_matrix() {
        let sm = assemble_sensing_matrix(&[7], 2).unwrap();
        assert_eq!(sm.entry(0, 0), phi(7, 1, 2).unwrap());
        assert_eq!(sm.entry(1, 0), phi(7, 2, 2).unwrap());
    }

    #[test]
    fn rip_of_orthonormal_is_zero() {
        let eye = DMatrix::<f64>::identity(6, 6);
        for k in 1..=3 {
            let est = estimate_rip(&eye, k, RipMode::Exact).unwrap();
            assert!(est.delta < 1e-12);
        }
    }

    #[test]
    fn rip_detects_zero_column() {
        let mut a = DMatrix::<f64>::identity(4, 4);
        a.set_column(2, &DVector::zeros(4));
        let est = estimate_rip(&a, 1, RipMode::Exact).unwrap();
        assert!((est.delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn montecarlo_rip_lower_bounds_exact() {
        let mut rng = seed::stream_rng("test.rip", 0);
        let a = DMatrix::from_fn(8, 16, |_, _| {
            seed::standard_normal(&mut rng) / (8f64).sqrt()
        });
        let exact = estimate_rip(&a, 2, RipMode::Exact).unwrap();
        let mc = estimate_rip(
            &a,
            2,
            RipMode::MonteCarlo {
                samples: 10_000,
                seed: 1,
            },
        )
        .unwrap();
        assert!(mc.delta <= exact.delta + 1e-9, "{} vs {}", mc.delta, exact.delta);
        assert!(mc.delta > 0.0);
    }

    #[test]
    fn rip_monotone_in_k() {
        let mut rng = seed::stream_rng("test.rip2", 0);
        let a = DMatrix::from_fn(6, 10, |_, _| {
            seed::standard_normal(&mut rng) / (6f64).sqrt()
        });
        let mut prev = 0.0;
        for k in 1..=4 {
            let est = estimate_rip(&a, k, RipMode::Exact).unwrap();
            assert!(est.delta >= prev - 1e-12);
            prev = est.delta;
        }
    }

    #[test]
    fn submatrix_norm_full_k_is_spectral_norm() {
        let mut rng = seed::stream_rng("test.norm", 0);
        let x = DMatrix::from_fn(5, 7, |_, _| seed::standard_normal(&mut rng));
        let full = submatrix_norm(&x, 7, NormMode::Exact).unwrap();
        assert!((full.value - spectral_norm(&x)).abs() < 1e-9);
    }

    #[test]
    fn submatrix_norm_identity_is_one() {
        let eye = DMatrix::<f64>::identity(5, 5);
        for k in 1..=5 {
            let v = submatrix_norm(&eye, k, NormMode::Exact).unwrap();
            assert!((v.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_between_zero_and_exact() {
        let mut rng = seed::stream_rng("test.norm2", 3);
        let x = DMatrix::from_fn(6, 10, |_, _| seed::standard_normal(&mut rng));
        let exact = submatrix_norm(&x, 3, NormMode::Exact).unwrap();
        let greedy = submatrix_norm(&x, 3, NormMode::Greedy).unwrap();
        assert!(greedy.value <= exact.value + 1e-9);
        assert!(exact.value <= exact.upper_bound + 1e-9);
        // monotone in k and bounded by the spectral norm
        let mut prev = 0.0;
        for k in 1..=6 {
            let v = submatrix_norm(&x, k, NormMode::Exact).unwrap();
            assert!(v.value >= prev - 1e-9);
            assert!(v.value <= v.upper_bound + 1e-9);
            prev = v.value;
        }
    }

    #[test]
    fn enumeration_guard_fires() {
        let x = DMatrix::<f64>::zeros(4, 200);
        assert!(matches!(
            submatrix_norm(&x, 14, NormMode::Exact),
            Err(CoeffError::EnumerationGuard { .. })
        ));
    }
}
