//! Random-number streams and the sampling kernels used by the Gibbs sweep.

mod polya_gamma;
mod truncnorm;

pub use polya_gamma::{pg_mean, pg_variance, sample_polya_gamma, PG_EXACT_MAX};
pub use truncnorm::{sample_truncnorm, TruncatedNormal};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Seeded ChaCha8 stream. Streams with the same seed but different stream
/// ids are independent, which lets parallel work draw reproducibly.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { seed, stream, inner }
    }

    /// Independent child stream identified by `id`.
    pub fn split(&self, id: u64) -> Self {
        RngStream::with_stream(self.seed, splitmix(self.stream ^ splitmix(id.wrapping_add(1))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `N(mean, var)`; a zero variance returns `mean` without consuming randomness.
pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    if var == 0.0 {
        mean
    } else {
        mean + var.sqrt() * standard_normal(rng)
    }
}

/// Gamma with shape–rate parameterisation (mean `shape / rate`).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma(shape = {shape}, rate = {rate}): {e}")))?;
    let mut x: f64 = dist.sample(rng);
    while x <= 0.0 {
        x = dist.sample(rng);
    }
    Ok(x)
}

/// Inverse gamma `IG(shape, scale)` with density ∝ x^{-shape-1} exp(-scale / x).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("inverse gamma scale {scale}")));
    }
    Ok(scale / sample_gamma(rng, shape, 1.0)?)
}

/// Multinomial draw by sequential binomial conditioning. Weights need not be
/// normalised. `n = 0` returns zeros without consuming randomness.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u32, weights: &[f64]) -> Result<Vec<u32>> {
    let mut out = vec![0u32; weights.len()];
    if n == 0 {
        return Ok(out);
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("multinomial weights must be finite and non-negative".into()));
    }
    let mut mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter("multinomial weights sum to zero".into()));
    }
    let mut left = n;
    for (k, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == weights.len() || w >= mass {
            out[k] = left;
            break;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let draw = if p == 0.0 {
            0
        } else {
            Binomial::new(left as u64, p)
                .map_err(|e| Error::InvalidParameter(format!("binomial: {e}")))?
                .sample(rng) as u32
        };
        out[k] = draw;
        left -= draw;
        mass -= w;
    }
    Ok(out)
}

/// Index drawn with probability proportional to `exp(log_weights)`.
pub fn sample_categorical_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical("categorical draw", "all weights are zero or invalid"));
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (j, wj) in w.iter().enumerate() {
        if target < *wj {
            return Ok(j);
        }
        target -= wj;
    }
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0))
}

/// Draw from `N(P⁻¹h, P⁻¹)` using the Cholesky factor of the precision `P`.
pub fn sample_mvn_precision<R: Rng + ?Sized>(rng: &mut R, h: &DVector<f64>, precision: &DMatrix<f64>) -> Result<DVector<f64>> {
    let chol = Cholesky::new(precision)?;
    Ok(sample_mvn_with_factor(rng, h, &chol))
}

/// As [`sample_mvn_precision`] with a precomputed factor.
pub fn sample_mvn_with_factor<R: Rng + ?Sized>(rng: &mut R, h: &DVector<f64>, chol: &Cholesky) -> DVector<f64> {
    let w = chol.solve_lower(h);
    let z = DVector::from_fn(h.len(), |_, _| standard_normal(rng));
    // x = L⁻ᵀ (L⁻¹ h + z)
    chol.solve_upper(&(w + z))
}
