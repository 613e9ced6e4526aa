//! Sample moments.

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    covariance(x, x)
}

/// Unbiased sample covariance.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(&x[..n]), mean(&y[..n]));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1) as f64
}

pub fn rms(x: &[f64]) -> f64 {
    crate::math::sqrt(mean(&x.iter().map(|v| v * v).collect::<alloc::vec::Vec<_>>()))
}

/// Standard error of a Gaussian sample variance, `var * sqrt(2/(n-1))`.
pub fn variance_std_error(var: f64, n: usize) -> f64 {
    var * crate::math::sqrt(2.0 / (n.max(2) - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert!((covariance(&x, &[2.0, 4.0, 6.0, 8.0]) - 10.0 / 3.0).abs() < 1e-15);
        assert!(variance(&[1.0]).is_nan());
        assert!((rms(&[3.0, -3.0]) - 3.0).abs() < 1e-15);
    }
}
