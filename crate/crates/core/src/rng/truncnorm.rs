//! Truncated normal draws on a half-open interval `[lo, hi)`.
//!
//! Uses uniform, normal, half-normal or translated-exponential proposals
//! depending on where the standardised interval sits, so that acceptance
//! rates stay bounded away from zero even far in the tails.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::standard_normal;
use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Draw from `N(mean, sd²)` restricted to `[lo, hi)`. Either bound may be
/// infinite.
pub fn sample_truncnorm<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64> {
    Ok(TruncatedNormal::new(mean, sd, lo, hi)?.sample(rng))
}

/// A fixed truncated normal law, for drawing many values from one interval.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    // standardised bounds, mirrored so that the upper one is positive
    a: f64,
    b: f64,
    mirrored: bool,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !mean.is_finite() || !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "truncated normal N({mean}, {sd}²) on [{lo}, {hi})"
            )));
        }
        if sd == 0.0 {
            if mean >= lo && mean < hi {
                return Ok(TruncatedNormal { mean, sd, lo, hi, a: 0.0, b: 0.0, mirrored: false });
            }
            return Err(Error::numerical("truncated normal", "zero scale with mean outside the interval"));
        }
        let a = (lo - mean) / sd;
        let b = (hi - mean) / sd;
        let (a, b, mirrored) = if b <= 0.0 { (-b, -a, true) } else { (a, b, false) };
        Ok(TruncatedNormal { mean, sd, lo, hi, a, b, mirrored })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd == 0.0 {
            return self.mean;
        }
        let z = standard_in(rng, self.a, self.b);
        let z = if self.mirrored { -z } else { z };
        clamp_half_open(self.mean + self.sd * z, self.lo, self.hi)
    }
}

fn clamp_half_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x >= hi {
        hi.next_down().max(lo)
    } else {
        x
    }
}

/// Standard normal restricted to `(a, b)` with `b > 0`.
fn standard_in<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let w = b - a;
    if a >= 0.0 {
        if w.is_finite() && w * (2.0 * a + w) <= 2.0 {
            // exp(-(x² - a²)/2) stays above e⁻¹ on the interval
            loop {
                let x = a + w * rng.random::<f64>();
                if rng.random::<f64>() <= (-0.5 * (x * x - a * a)).exp() {
                    return x;
                }
            }
        }
        if a < 0.5 {
            loop {
                let x = standard_normal(rng).abs();
                if x >= a && x < b {
                    return x;
                }
            }
        }
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = Exp1.sample(rng);
            let x = a + e / lambda;
            if x >= b {
                continue;
            }
            if rng.random::<f64>() <= (-0.5 * (x - lambda).powi(2)).exp() {
                return x;
            }
        }
    }
    if w < SQRT_2PI {
        loop {
            let x = a + w * rng.random::<f64>();
            if rng.random::<f64>() <= (-0.5 * x * x).exp() {
                return x;
            }
        }
    }
    loop {
        let x = standard_normal(rng);
        if x >= a && x < b {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, QuadConfig};
    use crate::rng::RngStream;
    use crate::special::{norm_cdf, norm_pdf};

    fn quad_mean(lo: f64, hi: f64) -> f64 {
        let cfg = QuadConfig { rel_tol: 1e-12, ..QuadConfig::default() };
        let mass = integrate(norm_pdf, lo, hi, &[], &cfg).value;
        integrate(|x| x * norm_pdf(x), lo, hi, &[], &cfg).value / mass
    }

    fn check_mean(rng: &mut RngStream, mean: f64, sd: f64, lo: f64, hi: f64, oracle: f64) {
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_truncnorm(rng, mean, sd, lo, hi).unwrap()).collect();
        assert!(xs.iter().all(|x| *x >= lo && *x < hi));
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        let se = (v / n as f64).sqrt();
        assert!((m - oracle).abs() < 4.0 * se + 1e-12, "[{lo}, {hi}): {m} vs {oracle}");
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = RngStream::new(2);
        check_mean(&mut rng, 0.0, 1.0, 0.0, f64::INFINITY, (2.0 / std::f64::consts::PI).sqrt());
    }

    #[test]
    fn interval_means_against_quadrature() {
        let mut rng = RngStream::new(4);
        for &(lo, hi) in &[
            (5.0, 6.0),
            (-1.0, 0.3),
            (-0.2, 4.0),
            (0.1, 0.2),
            (0.3, 3.5),
            (2.0, 30.0),
            (-6.0, -5.0),
            (-8.0, 8.0),
        ] {
            check_mean(&mut rng, 0.0, 1.0, lo, hi, quad_mean(lo, hi));
        }
        let closed = (norm_pdf(5.0) - norm_pdf(6.0)) / (norm_cdf(6.0) - norm_cdf(5.0));
        assert!((quad_mean(5.0, 6.0) - closed).abs() < 1e-8);
    }

    #[test]
    fn far_tail_and_location_scale() {
        let mut rng = RngStream::new(6);
        for _ in 0..1000 {
            let x = sample_truncnorm(&mut rng, 0.0, 1.0, 40.0, f64::INFINITY).unwrap();
            assert!(x >= 40.0 && x < 41.0);
        }
        // mean 2, sd 3 on [5, 8) is the standard law on [1, 2)
        check_mean(&mut rng, 2.0, 3.0, 5.0, 8.0, 2.0 + 3.0 * quad_mean(1.0, 2.0));
        check_mean(&mut rng, 0.0, 1.0, f64::NEG_INFINITY, -3.0, quad_mean(-12.0, -3.0));
    }

    #[test]
    fn ks_against_closed_form_cdf() {
        let mut rng = RngStream::new(10);
        let (a, b) = (0.4f64, 1.9f64);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_truncnorm(&mut rng, 0.0, 1.0, a, b).unwrap()).collect();
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let (fa, fb) = (norm_cdf(a), norm_cdf(b));
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = (norm_cdf(*x) - fa) / (fb - fa);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.949 / (n as f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn rejects_bad_intervals() {
        let mut rng = RngStream::new(1);
        assert!(sample_truncnorm(&mut rng, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(sample_truncnorm(&mut rng, 0.0, -1.0, 0.0, 1.0).is_err());
        assert_eq!(sample_truncnorm(&mut rng, 0.5, 0.0, 0.0, 1.0).unwrap(), 0.5);
    }
}
