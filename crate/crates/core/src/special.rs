//! Standard normal distribution helpers with tail-accurate evaluation.

use libm::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Standard normal survival function `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

pub fn norm_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x - LN_SQRT_2PI).exp()
    }
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 0.0 {
        return (-norm_sf(x)).ln_1p();
    }
    if x > -37.0 {
        return norm_cdf(x).ln();
    }
    // asymptotic Mills-ratio expansion
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse standard normal CDF: a rational starting point refined by Newton
/// steps on the tail-accurate CDF.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_quantile(1.0 - p);
    }
    // Abramowitz & Stegun 26.2.23 for the lower tail, |error| < 4.5e-4
    let t = (-2.0 * p.ln()).sqrt();
    let mut z = -(t - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
        / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t));
    for _ in 0..4 {
        // Newton on ln Φ keeps the step well scaled deep in the tail
        let step = (ln_norm_cdf(z) - p.ln()) * norm_cdf(z) / norm_pdf(z);
        z -= step;
        if step.abs() < 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

/// Probability that a standard normal falls in `[a, b)`.
///
/// When both ends sit in the upper half the difference is taken between
/// survival functions so that far-tail intervals keep their relative accuracy.
pub fn norm_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let p = if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    };
    p.max(0.0)
}

/// `ln P(a ≤ Z < b)`, usable when the interval mass underflows in linear scale.
pub fn ln_norm_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    let p = norm_interval(a, b);
    if p > 1e-300 {
        return p.ln();
    }
    // both ends deep in the same tail: ln(Φ(hi) - Φ(lo)) = ln Φ(hi) + ln(1 - Φ(lo)/Φ(hi))
    let (lo, hi) = if a >= 0.0 { (-b, -a) } else { (a, b) };
    let l_hi = ln_norm_cdf(hi);
    let l_lo = ln_norm_cdf(lo);
    let d = l_lo - l_hi;
    if d >= 0.0 {
        f64::NEG_INFINITY
    } else {
        l_hi + (-d.exp()).ln_1p()
    }
}

/// `√(2π)`.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Taylor series of erf, independent of the library implementation.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) || n < 5.0 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn constants_consistent() {
        assert!((SQRT_2PI - (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((LN_SQRT_2PI - SQRT_2PI.ln()).abs() < 1e-15);
    }

    #[test]
    fn cdf_matches_series() {
        for &x in &[-3.0, -1.0, -0.3, 0.0, 0.5, 1.0, 2.5] {
            let oracle = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((norm_cdf(x) - oracle).abs() < 1e-14, "x = {x}");
        }
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let a = ln_norm_cdf(-36.999);
        let b = ln_norm_cdf(-37.001);
        assert!((a - b).abs() < 0.1);
        assert!(ln_norm_cdf(-200.0).is_finite());
        assert!((ln_norm_cdf(40.0)).abs() < 1e-300);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-5, 0.025, 0.3, 0.5, 0.9, 0.975, 1.0 - 1e-9] {
            let z = norm_quantile(p);
            assert!((norm_cdf(z) - p).abs() < 1e-12 * p.max(1e-3), "p = {p}");
        }
    }

    #[test]
    fn far_tail_interval_keeps_precision() {
        let p = norm_interval(10.0, 11.0);
        let direct = norm_sf(10.0) - norm_sf(11.0);
        assert!(p > 0.0);
        assert!((p - direct).abs() <= 1e-30);
        let mirrored = norm_interval(-11.0, -10.0);
        assert!((p - mirrored).abs() / p < 1e-12);
        let lp = ln_norm_interval(40.0, 41.0);
        assert!(lp.is_finite() && lp < -700.0);
    }
}
