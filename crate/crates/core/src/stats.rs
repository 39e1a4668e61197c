//! Small statistics helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Two-sided `level` quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(level: f64, dof: usize) -> f64 {
    let p = 0.5 + level / 2.0;
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof > 0")
        .inverse_cdf(p)
}

/// Standard normal quantile at probability `p`.
pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Half-width of the 95% t-interval for the mean of `xs`.
pub fn t_half_width95(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    t_quantile(0.95, xs.len() - 1) * std_error(xs)
}

/// `log Σ exp(x_i)` with max shift; `-inf` if all entries are `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log mean exp(x_i)` and the delta-method standard error of that log.
pub fn log_mean_exp(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, f64::INFINITY);
    }
    let w: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let wm = mean(&w);
    let se = if xs.len() < 2 { 0.0 } else { (variance(&w) / n).sqrt() / wm };
    (m + wm.ln(), se)
}

/// Wilson score interval for a binomial proportion at 95%.
pub fn wilson95(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = z_quantile(0.975);
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Ordinary least squares fit `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles() {
        assert!((t_quantile(0.95, 15) - 2.131_449_5).abs() < 1e-6);
        assert!((z_quantile(0.975) - 1.959_964).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let (lm, se) = log_mean_exp(&[0.0, 0.0, 0.0]);
        assert_eq!((lm, se), (0.0, 0.0));
    }

    #[test]
    fn wilson_brackets_proportion() {
        let (lo, hi) = wilson95(30, 100);
        assert!(lo < 0.3 && hi > 0.3);
        assert_eq!(wilson95(0, 10).0, 0.0);
    }

    #[test]
    fn line_fit_exact() {
        let (a, b) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }
}
