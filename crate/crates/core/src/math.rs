//! Small numeric helpers shared across modules.

/// Log-sum-exp of a slice, guarding against empty input and `-inf` entries.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Mean of a slice; 0 for empty input.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (denominator n - 1).
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Weighted quantile of `(value, weight)` pairs with weights summing to ~1.
///
/// Pairs must be sorted by value. Returns the smallest value whose
/// cumulative weight reaches `q`.
pub fn weighted_quantile_sorted(pairs: &[(f64, f64)], q: f64) -> f64 {
    let mut cum = 0.0;
    for &(v, w) in pairs {
        cum += w;
        if cum >= q {
            return v;
        }
    }
    pairs.last().map(|&(v, _)| v).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let vals = [-1.0f64, 0.5, 2.0];
        let direct: f64 = vals.iter().map(|v| f64::exp(*v)).sum::<f64>().ln();
        assert!((logsumexp(&vals) - direct).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let vals = [-1000.0, -1000.5];
        let out = logsumexp(&vals);
        assert!((out - (-1000.0 + (1.0f64 + (-0.5f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_all_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }
}
