//! Pólya–Gamma sampling.
//!
//! `PG(1, c)` is drawn exactly with Devroye-style alternating-series rejection
//! from a mixture of an exponential tail and a truncated inverse-Gaussian body.
//! `PG(b, c)` with integer `b` is a sum of `b` such draws; above a crossover
//! the sum is replaced by a normal with the exact mean and variance.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::standard_normal;
use crate::error::{Error, Result};
use crate::special::ln_norm_cdf;

/// Default largest shape drawn as an exact sum.
pub const PG_EXACT_MAX: u32 = 50;

const TRUNC: f64 = 0.64;
const PI: f64 = std::f64::consts::PI;

/// `E[PG(b, c)] = b tanh(c/2) / (2c)`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let h = 0.5 * c.abs();
    if h < 1e-4 {
        // tanh(h)/h series
        0.25 * b * (1.0 - h * h / 3.0 + 2.0 * h.powi(4) / 15.0)
    } else {
        0.25 * b * h.tanh() / h
    }
}

/// `Var[PG(b, c)] = b (sinh c - c) / (4 c³ cosh²(c/2))`.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        b * (1.0 / 24.0 - c * c / 120.0)
    } else {
        // sinh(c) sech²(c/2) = 2 tanh(c/2), which keeps large c finite
        let half = 0.5 * c;
        let sech2 = 1.0 / half.cosh().powi(2);
        b * (2.0 * half.tanh() - c * sech2) / (4.0 * c.powi(3))
    }
}

/// Draw `PG(b, c)`.
///
/// Shapes up to `exact_max` are exact; larger shapes use a moment-matched
/// normal, redrawn until positive.
pub fn sample_polya_gamma<R: Rng + ?Sized>(rng: &mut R, b: u32, c: f64, exact_max: u32) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::numerical("Polya-Gamma draw", format!("tilt parameter {c} is not finite")));
    }
    if b == 0 {
        return Ok(0.0);
    }
    if b <= exact_max {
        let z = 0.5 * c.abs();
        let sampler = Devroye::new(z);
        return Ok((0..b).map(|_| sampler.draw(rng)).sum());
    }
    let mean = pg_mean(b as f64, c);
    let sd = pg_variance(b as f64, c).sqrt();
    loop {
        let x = mean + sd * standard_normal(rng);
        if x > 0.0 {
            return Ok(x);
        }
    }
}

/// Exact `PG(1, 2z)` sampler for a fixed `z ≥ 0`.
struct Devroye {
    z: f64,
    k: f64,
    p_exp: f64,
}

impl Devroye {
    fn new(z: f64) -> Self {
        let k = PI * PI / 8.0 + 0.5 * z * z;
        // q / p with p the exponential-tail mass and q the inverse-Gaussian mass
        let rt = (1.0 / TRUNC).sqrt();
        let b = rt * (TRUNC * z - 1.0);
        let a = -rt * (TRUNC * z + 1.0);
        let x0 = k.ln() + k * TRUNC;
        let q_over_p = 4.0 / PI * ((x0 - z + ln_norm_cdf(b)).exp() + (x0 + z + ln_norm_cdf(a)).exp());
        Devroye { z, k, p_exp: 1.0 / (1.0 + q_over_p) }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.p_exp {
                let e: f64 = Exp1.sample(rng);
                TRUNC + e / self.k
            } else {
                self.truncated_inverse_gaussian(rng)
            };
            let mut s = series_term(0, x);
            let y = rng.random::<f64>() * s;
            let mut n = 0;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series_term(n, x);
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += series_term(n, x);
                    if y > s {
                        break;
                    }
                }
            }
        }
    }

    /// Inverse Gaussian with mean `1/z`, shape 1, truncated to `(0, TRUNC)`.
    fn truncated_inverse_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = self.z;
        if z < 1.0 / TRUNC {
            // mean beyond the truncation point: propose from the z = 0 law
            loop {
                let (mut e1, mut e2): (f64, f64);
                loop {
                    e1 = Exp1.sample(rng);
                    e2 = Exp1.sample(rng);
                    if e1 * e1 <= 2.0 * e2 / TRUNC {
                        break;
                    }
                }
                let d = 1.0 + e1 * TRUNC;
                let x = TRUNC / (d * d);
                if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                    return x;
                }
            }
        }
        let mu = 1.0 / z;
        loop {
            let y = standard_normal(rng);
            let mu_y = mu * y * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < TRUNC {
                return x;
            }
        }
    }
}

/// Terms of the alternating series for the `J*(1, 0)` density, switching
/// representation at `TRUNC`.
fn series_term(n: u32, x: f64) -> f64 {
    let kn = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        kn * (-0.5 * kn * kn * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + kn.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}
