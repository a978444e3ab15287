//! Log-space helpers. Weight arithmetic everywhere in the crate goes through
//! these so that large tilts never overflow.

/// Log of the sum of exponentials, max-shifted for stability.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log of the arithmetic mean of exponentials.
///
/// For a vector of equal entries `c` the result is exactly `c` when the shifted
/// sum is exactly the length (all exp(0) terms), which is what keeps the
/// zero-tilt partition estimate at exactly 0.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Normalize log-weights into a probability vector via max-shift.
///
/// Returns `None` when the vector is empty, contains NaN, or every entry is
/// `-inf` (a degenerate ensemble).
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    if log_weights.is_empty() || log_weights.iter().any(|w| w.is_nan()) {
        return None;
    }
    let max = log_weights.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return None;
    }
    let unnormalized: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let sum: f64 = unnormalized.iter().sum();
    Some(unnormalized.into_iter().map(|w| w / sum).collect())
}

/// Index of the largest value, ties broken toward the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
