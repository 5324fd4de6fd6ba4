//! Small statistical helpers for the verification harnesses.

/// Two-sample Kolmogorov-Smirnov test. Returns `true` when the hypothesis
/// of equal laws is NOT rejected at level `alpha` (`alpha` in {0.05, 0.01}).
///
/// Uses the asymptotic critical value `c(alpha) sqrt((m + n) / (m n))`;
/// with ties (integer-valued samples) the test is conservative.
pub fn ks_two_sample(xs: &[f64], ys: &[f64], alpha: f64) -> bool {
    let d = ks_statistic(xs, ys);
    let m = xs.len() as f64;
    let n = ys.len() as f64;
    let c = if alpha <= 0.01 { 1.628 } else { 1.358 };
    d <= c * ((m + n) / (m * n)).sqrt()
}

/// The KS statistic `sup |F_x - F_y|` of two empirical distributions.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|u, v| u.partial_cmp(v).unwrap());
    b.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (m, n) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < m && j < n {
        let t = a[i].min(b[j]);
        while i < m && a[i] <= t {
            i += 1;
        }
        while j < n && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / m as f64 - j as f64 / n as f64).abs());
    }
    d
}

/// Binomial standard error `sqrt(p (1 - p) / trials)`.
pub fn binomial_stderr(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn ks_accepts_identical_samples() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(ks_two_sample(&xs, &xs, 0.05));
        assert_eq!(ks_statistic(&xs, &xs), 0.0);
    }

    #[test]
    fn ks_rejects_shifted_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>() + 0.2).collect();
        assert!(!ks_two_sample(&xs, &ys, 0.01));
    }

    #[test]
    fn stderr_formula() {
        assert!((binomial_stderr(0.5, 100) - 0.05).abs() < 1e-15);
        assert_eq!(binomial_stderr(0.0, 100), 0.0);
    }
}
