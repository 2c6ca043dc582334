//! Benjamini–Hochberg step-up adjustment.

/// Benjamini–Hochberg adjusted p-values, returned in input order.
///
/// `adj_(k) = min_{l >= k} (n / l) * p_(l)`, capped at 1.
pub fn benjamini_hochberg(pvalues: &[f64]) -> Vec<f64> {
    let n = pvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut adjusted = vec![0.0; n];
    let mut running = 1.0_f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let candidate = pvalues[idx] * n as f64 / (rank + 1) as f64;
        running = running.min(candidate).min(1.0);
        adjusted[idx] = running.max(pvalues[idx]);
    }
    adjusted
}
