//! Log-domain scalar helpers shared across the crate.
//!
//! Everything downstream works in log space: probabilities are only
//! materialized for sampling and reports, so the numerically sensitive
//! pieces are concentrated here.

/// e^x.
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Natural logarithm.
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// ln(1 + x), accurate near zero.
#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// log Σ exp(x_i), stabilized by the running maximum.
///
/// Returns -inf for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += exp(x - max);
    }
    max + ln(sum)
}

/// Two-argument logsumexp.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a >= b {
        a + ln_1p(exp(b - a))
    } else {
        b + ln_1p(exp(a - b))
    }
}

/// ln(1 + e^z), the stable form of -log σ(-z).
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + ln_1p(exp(-z))
    } else {
        ln_1p(exp(z))
    }
}

/// Logistic sigmoid, evaluated on the branch that avoids overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log σ(x) = -softplus(-x).
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let xs = [0.0, 0.0, 0.0, 3f64.ln()];
        assert!((logsumexp(&xs) - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        // β as small as 0.005 produces logit gaps in the hundreds.
        let xs = [1000.0, 999.0];
        let expected = 1000.0 + (1.0 + (-1f64).exp()).ln();
        assert!((logsumexp(&xs) - expected).abs() < 1e-12);
        assert!(logsumexp(&[-1000.0, -1000.0]).is_finite());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn softplus_equals_negative_log_sigmoid() {
        for &z in &[-40.0, -3.0, 0.0, 1e-8, 5.0, 40.0] {
            let direct = -(sigmoid(-z)).ln();
            assert!((softplus(z) - direct).abs() < 1e-12, "z = {z}");
        }
    }
}
