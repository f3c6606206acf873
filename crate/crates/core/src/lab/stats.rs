//! Two-sample Kolmogorov–Smirnov test and exact binomial quantiles.

/// Two-sample KS statistic `D = sup |F_a − F_b|` and its asymptotic p-value.
/// Empty inputs yield `(0, 1)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 1.0);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // Step past every copy of the smaller value before comparing.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`, the Kolmogorov tail.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let a = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 2.0;
    let mut prev = 0.0;
    for j in 1..=100 {
        let term = sign * (a * (j * j) as f64).exp();
        sum += term;
        if term.abs() <= 1e-12 * prev || term.abs() <= 1e-300 {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term.abs();
    }
    1.0
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    // Log-space to stay finite for large n.
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let mut log_choose = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (log_choose + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .collect()
}

/// Central interval of counts `[lo, hi]` holding at least `level` of the
/// `Binomial(n, p)` mass, with at most `(1 − level)/2` excluded on each side.
pub fn binomial_interval(n: usize, p: f64, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0;
    let pmf = binomial_pmf(n, p);
    let mut lo = 0;
    let mut below = 0.0;
    while lo < n && below + pmf[lo] <= tail {
        below += pmf[lo];
        lo += 1;
    }
    let mut hi = n;
    let mut above = 0.0;
    while hi > 0 && above + pmf[hi] <= tail {
        above += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force supremum of the ECDF gap over every sample point.
    fn ecdf_gap(a: &[f64], b: &[f64]) -> f64 {
        let f = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (f(a, x) - f(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn examples() {
        let a = [0.3, 1.2, -0.5, 2.0];
        assert_eq!(ks_two_sample(&a, &a), (0.0, 1.0));
        assert_eq!(ks_two_sample(&[0.0; 5], &[1.0; 7]).0, 1.0);
        let x = [0.61, 0.29, 0.06, 0.59, -1.73, -0.74, 0.51, -0.56, 0.39, 1.64];
        let y = [-0.92, -0.44, 0.97, 1.69, 1.93, 0.57, 2.48, 1.05, 0.73, 1.36];
        let (d, p) = ks_two_sample(&x, &y);
        assert_eq!(d, ecdf_gap(&x, &y));
        assert!((d - 0.6).abs() < 1e-12);
        assert!(p > 0.02 && p < 0.1, "{p}");
    }

    #[test]
    fn ties_are_handled() {
        let a = [1.0, 1.0, 2.0, 3.0, 3.0];
        let b = [1.0, 2.0, 2.0, 2.0, 4.0, 4.0];
        assert_eq!(ks_two_sample(&a, &b).0, ecdf_gap(&a, &b));
    }

    #[test]
    fn kolmogorov_tail() {
        assert_eq!(kolmogorov_q(0.0), 1.0);
        // Q(1.358) is the classical 5% critical point.
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!(kolmogorov_q(3.0) < 1e-6);
    }

    #[test]
    fn binomial_bounds() {
        let pmf = binomial_pmf(64, 0.05);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (lo, hi) = binomial_interval(64, 0.05, 0.99);
        assert_eq!(lo, 0);
        let upper_tail: f64 = pmf[hi + 1..].iter().sum();
        assert!(upper_tail <= 0.005 && upper_tail + pmf[hi] > 0.005);
        let (lo, hi) = binomial_interval(1000, 0.05, 0.99);
        assert!(lo > 30 && lo < 50 && hi > 50 && hi < 70, "{lo} {hi}");
    }
}
