//! Evaluation metrics: SNR, temporal and increment correlations, and box-plot
//! statistics, plus the per-run metrics CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{pearson, ReadingTrace};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("signal is identically zero")]
    ZeroSignal,
    #[error("empty input")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Reconstruction SNR in dB: `10 log10(sum d^2 / sum (d - d_hat)^2)`.
/// Returns `f64::INFINITY` when the reconstruction is exact.
pub fn snr_db(d: &[f64], d_hat: &[f64]) -> Result<f64, AnalysisError> {
    let p_signal: f64 = d.iter().map(|x| x * x).sum();
    if p_signal == 0.0 {
        return Err(AnalysisError::ZeroSignal);
    }
    let p_noise: f64 = d
        .iter()
        .zip(d_hat)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    if p_noise == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (p_signal / p_noise).log10())
    }
}

/// Pearson correlation between `d(t)` and `d(t-1)` for every round `t >= 1`.
/// Zero-variance rounds yield `None` (undefined) and are excluded from
/// summaries.
pub fn round_correlation(trace: &ReadingTrace) -> Vec<Option<f64>> {
    (1..trace.n_rounds())
        .map(|t| pearson(trace.round(t - 1), trace.round(t)))
        .collect()
}

/// Pearson correlation between `d(t-1)` and the increment
/// `n(t-1) = d(t) - d(t-1)` for every round `t >= 1`.
pub fn increment_correlation(trace: &ReadingTrace) -> Vec<Option<f64>> {
    (1..trace.n_rounds())
        .map(|t| {
            let prev = trace.round(t - 1);
            let inc: Vec<f64> = trace
                .round(t)
                .iter()
                .zip(prev)
                .map(|(a, b)| a - b)
                .collect();
            pearson(prev, &inc)
        })
        .collect()
}

/// Five-number summary with quartiles by linear interpolation between order
/// statistics (quantile at rank `(n - 1) * p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        let rank = (v.len() - 1) as f64 * p;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        v[lo] * (1.0 - frac) + v[hi] * frac
    };
    Ok(BoxplotStats {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

/// One row of the per-run metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub snr_db: f64,
    pub err_l2: f64,
    /// Reconstruction error bound when one was computable.
    pub bound: Option<f64>,
    pub cost: u64,
    pub feasible: bool,
    pub k: usize,
    /// `exact` or `estimated`, labelling how the bound terms were computed.
    pub mode: String,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Write the metrics CSV (`round,snr_db,err_l2,bound,cost,feasible,k,mode`).
/// A `# config_hash=<hex>` comment line pins the resolved configuration.
pub fn write_metrics_csv(
    path: &Path,
    rows: &[RoundMetrics],
    config_hash: &str,
) -> Result<(), AnalysisError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("round,snr_db,err_l2,bound,cost,feasible,k,mode\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            fmt_f64(r.snr_db),
            fmt_f64(r.err_l2),
            r.bound.map(fmt_f64).unwrap_or_default(),
            r.cost,
            r.feasible,
            r.k,
            r.mode
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parse a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>, AnalysisError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            continue;
        }
        let parse = |s: &str| -> f64 {
            match s {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                _ => s.parse().unwrap_or(f64::NAN),
            }
        };
        rows.push(RoundMetrics {
            round: f[0].parse().unwrap_or(0),
            snr_db: parse(f[1]),
            err_l2: parse(f[2]),
            bound: if f[3].is_empty() { None } else { Some(parse(f[3])) },
            cost: f[4].parse().unwrap_or(0),
            feasible: f[5] == "true",
            k: f[6].parse().unwrap_or(0),
            mode: f[7].to_string(),
        });
    }
    Ok(rows)
}

/// Least-squares slope of `values[t]` against `t`.
pub fn ls_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let tx: f64 = (0..values.len()).map(|t| t as f64).sum();
    let ty: f64 = values.iter().sum();
    let (mx, my) = (tx / n, ty / n);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &v) in values.iter().enumerate() {
        num += (t as f64 - mx) * (v - my);
        den += (t as f64 - mx) * (t as f64 - mx);
    }
    num / den
}
