//! Small descriptive statistics helpers.

use alloc::vec::Vec;

use crate::math;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator; zero for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    math::sqrt(sample_variance(xs))
}

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = math::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Standard error of a difference of two independent means.
pub fn two_sample_se(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(sample_variance(a) / a.len() as f64 + sample_variance(b) / b.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_and_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(sample_variance(&[7.0]), 0.0);
    }
}
