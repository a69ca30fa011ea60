//! Log-sum-exp with max subtraction, the workhorse of every log-domain sum.

/// log(Σ exp(x_i)) computed with per-slice max subtraction.
///
/// Returns `-inf` on an empty slice. For finite inputs the intermediate
/// `exp(x - max)` is in (0, 1], so the accumulation cannot overflow.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}

/// Column-wise log-sum-exp of an `n×n` row-major matrix.
///
/// Two row-major passes (column maxima, then accumulation) keep the memory
/// access pattern sequential; the accumulation order over rows is fixed, so
/// results are reproducible.
pub(crate) fn col_logsumexp(entries: &[f64], n: usize) -> Vec<f64> {
    let mut maxes = vec![f64::NEG_INFINITY; n];
    for row in entries.chunks_exact(n) {
        for (m, &x) in maxes.iter_mut().zip(row) {
            if x > *m {
                *m = x;
            }
        }
    }
    let mut sums = vec![0.0; n];
    for row in entries.chunks_exact(n) {
        for ((s, &m), &x) in sums.iter_mut().zip(&maxes).zip(row) {
            *s += (x - m).exp();
        }
    }
    sums.iter()
        .zip(&maxes)
        .map(|(&s, &m)| if m.is_finite() { m + s.ln() } else { m })
        .collect()
}
