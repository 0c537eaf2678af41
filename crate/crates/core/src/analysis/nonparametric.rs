use std::cmp::Ordering;

use num_traits::Float;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::AnalysisError;

/// Largest count of nonzero differences for which the Wilcoxon p-value is
/// computed exactly; larger samples fall back to the normal approximation.
pub const MAX_EXACT_PAIRS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult<T> {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub zeros_dropped: usize,
    /// Rank sum of positive differences `a - b`.
    pub w_plus: T,
    pub w_minus: T,
    /// `min(w_plus, w_minus)`.
    pub statistic: T,
    pub p_value: T,
    pub exact: bool,
    /// Normal-approximation score of `w_plus`, tie-corrected.
    pub z: T,
    /// `|z| / sqrt(n)`.
    pub effect_r: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FriedmanResult<T> {
    pub statistic: T,
    pub df: usize,
    pub p_value: T,
    pub subjects: usize,
    pub conditions: usize,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to float")
}

fn finite<T: Float>(v: T) -> Result<T, AnalysisError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AnalysisError::NonFinite)
    }
}

/// Average ranks (doubled so they stay integral) and tie group sizes.
fn doubled_ranks<T: Float>(values: &[T]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Positions start..=end share rank ((start+1) + (end+1)) / 2.
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        if end > start {
            ties.push((end - start + 1) as u64);
        }
        start = end + 1;
    }
    (ranks, ties)
}

/// Two-sided signed-rank test on the differences `a - b`.
pub fn wilcoxon_signed_rank<T: Float>(
    pairs: &[(T, T)],
) -> Result<WilcoxonResult<T>, AnalysisError> {
    if pairs.len() < 2 {
        return Err(AnalysisError::TooFew {
            what: "pairs",
            needed: 2,
            got: pairs.len(),
        });
    }
    let mut diffs = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let d = finite(finite(a)? - finite(b)?)?;
        if d != T::zero() {
            diffs.push(d);
        }
    }
    let n = diffs.len();
    if n == 0 {
        return Err(AnalysisError::Degenerate("all differences are zero"));
    }
    let magnitudes: Vec<T> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&magnitudes);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > T::zero())
        .map(|(r, _)| r)
        .sum();

    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let w_plus = plus as f64 / 2.0;
    let z = (w_plus - total as f64 / 4.0) / variance.sqrt();

    let exact = n <= MAX_EXACT_PAIRS;
    let p = if exact {
        exact_p(&ranks, plus)
    } else {
        let normal = Normal::standard();
        (2.0 * normal.sf(z.abs())).min(1.0)
    };
    let w_minus = (total - plus) as f64 / 2.0;
    Ok(WilcoxonResult {
        n,
        zeros_dropped: pairs.len() - n,
        w_plus: cast(w_plus),
        w_minus: cast(w_minus),
        statistic: cast(w_plus.min(w_minus)),
        p_value: cast(p),
        exact,
        z: cast(z),
        effect_r: cast(z.abs() / nf.sqrt()),
    })
}

/// P(|2S - total| >= |2 observed - total|) over all sign assignments, where
/// S is the doubled positive-rank sum.
fn exact_p(ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2 * observed).abs_diff(total);
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as u64).abs_diff(total) >= threshold)
        .map(|(_, c)| c)
        .sum();
    extreme as f64 / 2f64.powi(ranks.len() as i32)
}

/// Friedman rank test over an `n subjects x k conditions` matrix.
pub fn friedman_test<T: Float, R: AsRef<[T]>>(
    rows: &[R],
) -> Result<FriedmanResult<T>, AnalysisError> {
    let n = rows.len();
    if n < 2 {
        return Err(AnalysisError::TooFew {
            what: "subjects",
            needed: 2,
            got: n,
        });
    }
    let k = rows[0].as_ref().len();
    if k < 3 {
        return Err(AnalysisError::TooFew {
            what: "conditions",
            needed: 3,
            got: k,
        });
    }
    let mut rank_sums = vec![0u64; k];
    let mut tie_term = 0u64;
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != k {
            return Err(AnalysisError::Ragged {
                row: i,
                expected: k,
                got: row.len(),
            });
        }
        for &v in row {
            finite(v)?;
        }
        let (ranks, ties) = doubled_ranks(row);
        for (sum, r) in rank_sums.iter_mut().zip(ranks) {
            *sum += r;
        }
        tie_term += ties.iter().map(|&t| t * t * t - t).sum::<u64>();
    }

    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_term as f64 / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Err(AnalysisError::Degenerate(
            "every subject rated all conditions equally",
        ));
    }
    let sum_sq: f64 = rank_sums.iter().map(|&s| (s as f64 / 2.0).powi(2)).sum();
    let chi2 = (12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)) / correction;
    let chi2 = chi2.max(0.0);
    let df = k - 1;
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    Ok(FriedmanResult {
        statistic: cast(chi2),
        df,
        p_value: cast(dist.sf(chi2)),
        subjects: n,
        conditions: k,
    })
}

/// Benjamini-Hochberg adjusted p-values, in input order.
pub fn fdr_correct<T: Float>(pvalues: &[T]) -> Result<Vec<T>, AnalysisError> {
    for &p in pvalues {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(AnalysisError::PValueRange(p.to_f64().unwrap_or(f64::NAN)));
        }
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        pvalues[i]
            .partial_cmp(&pvalues[j])
            .unwrap_or(Ordering::Equal)
    });
    let mut adjusted = vec![T::zero(); m];
    let mut running = T::one();
    let mf = T::from(m).expect("count fits");
    for (pos, &i) in order.iter().enumerate().rev() {
        let rank = T::from(pos + 1).expect("count fits");
        running = running.min(pvalues[i] * (mf / rank));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Per-comparison threshold `alpha / comparisons`.
pub fn bonferroni_alpha<T: Float>(alpha: T, comparisons: usize) -> T {
    assert!(comparisons > 0, "at least one comparison");
    alpha / T::from(comparisons).expect("count fits")
}
