//! Small statistics helpers.

/// Median, averaging the two middle values for even lengths. Reorders the
/// slice. `None` when empty.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let (_, &mut hi, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        return Some(hi);
    }
    let lo = values[..n / 2]
        .iter()
        .copied()
        .max_by(f64::total_cmp)
        .expect("non-empty lower half");
    Some(0.5 * (lo + hi))
}

/// Exact one-sided McNemar test on paired binary outcomes.
///
/// `b` counts pairs where only the first condition succeeded, `c` pairs where
/// only the second did. Returns `P(X ≥ b)` for `X ~ Binomial(b + c, 1/2)`,
/// the p-value for "the first condition succeeds more often".
pub fn mcnemar_one_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    // log C(n, k) via a running sum of logs; n stays small (≤ trials)
    let ln_choose = |k: u64| -> f64 { (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum() };
    let ln_half_n = n as f64 * 0.5f64.ln();
    (b..=n).map(|k| (ln_choose(k) + ln_half_n).exp()).sum::<f64>().min(1.0)
}
