//! Pearson and Spearman correlation with two-tailed Student-t p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("input vector is constant")]
    ConstantInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFewObservations(usize),
    #[error("degrees of freedom must be >= 1 (got {0})")]
    BadDf(f64),
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub method: CorrelationMethod,
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-tailed p-value `2 * (1 - F(|t|))` for Student's t with `df` degrees
/// of freedom.
pub fn t_two_tailed_p(t: f64, df: f64) -> Result<f64, StatsError> {
    if !(df >= 1.0) || !df.is_finite() {
        return Err(StatsError::BadDf(df));
    }
    if t.is_nan() {
        return Err(StatsError::NonFinite);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::BadDf(df))?;
    // sf(|t|) avoids cancellation in 1 - cdf for large |t|.
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// p-value for a correlation coefficient over `n` observations.
pub fn correlation_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 - 1e-12 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    t_two_tailed_p(t, df).expect("n >= 3")
}

fn check(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn product_moment(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check(x, y)?;
    let r = product_moment(x, y)?;
    Ok(CorrelationResult { method: CorrelationMethod::Pearson, coefficient: r, p_value: correlation_p(r, x.len()), n: x.len() })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson on average ranks, p via the same t transform.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check(x, y)?;
    let r = product_moment(&average_ranks(x), &average_ranks(y))?;
    Ok(CorrelationResult { method: CorrelationMethod::Spearman, coefficient: r, p_value: correlation_p(r, x.len()), n: x.len() })
}

/// Largest sample size accepted by [`spearman_permutation_p`].
pub const PERMUTATION_MAX_N: usize = 10;

/// Exact two-sided permutation p-value for Spearman's rho: the fraction of
/// all orderings of `y` whose |rho| is at least the observed |rho|.
pub fn spearman_permutation_p(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    check(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let observed = product_moment(&rx, &ry)?.abs();
    if x.len() > PERMUTATION_MAX_N {
        return Ok(None);
    }
    let mut perm = ry.clone();
    let mut hits = 0u64;
    let mut total = 0u64;
    // Heap's algorithm over all n! orderings.
    let n = perm.len();
    let mut c = vec![0usize; n];
    let mut visit = |p: &[f64]| {
        total += 1;
        if product_moment(&rx, p).map(f64::abs).unwrap_or(0.0) >= observed - 1e-12 {
            hits += 1;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(Some(hits as f64 / total as f64))
}
