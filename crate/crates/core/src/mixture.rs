//! Log-normal mixture mathematics: CDFs, mixing proportions, the grouped-data
//! likelihood and the income measures derived from a fitted cell.

use crate::error::{Error, Result};
use crate::model::{GroupedPanel, ParamState};
use crate::quad::{integrate, QuadConfig};
use crate::special::{ln_norm_interval, norm_cdf, norm_interval, norm_pdf, norm_quantile, norm_sf};

/// Upper integration limit of the Gini integral is the quantile at `1 - GINI_UPPER_TAIL`.
pub const GINI_UPPER_TAIL: f64 = 1e-9;
const GINI_LOWER_TAIL: f64 = 1e-15;

/// `Φ((ln y - loc) / √scale2)`.
pub fn lognormal_cdf(y: f64, loc: f64, scale2: f64) -> Result<f64> {
    if !loc.is_finite() || !(scale2 > 0.0) || !scale2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "log-normal needs finite location and positive scale (loc = {loc}, scale2 = {scale2})"
        )));
    }
    if y.is_nan() || y < 0.0 {
        return Err(Error::InvalidParameter(format!("log-normal CDF evaluated at {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    Ok(norm_cdf((y.ln() - loc) / scale2.sqrt()))
}

/// Softmax over `(0, predictors…)`: the reference component has predictor 0.
pub fn mixing_proportions(predictors: &[f64]) -> Vec<f64> {
    let max = predictors.iter().copied().fold(0.0_f64, f64::max);
    let mut out = Vec::with_capacity(predictors.len() + 1);
    out.push((-max).exp());
    out.extend(predictors.iter().map(|p| (p - max).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    out
}

/// Finite mixture of log-normal distributions describing one area and period.
#[derive(Debug, Clone, PartialEq)]
pub struct LogNormalMixture {
    weights: Vec<f64>,
    locs: Vec<f64>,
    scales: Vec<f64>,
}

impl LogNormalMixture {
    /// Components with zero scale are treated as point masses at `exp(loc)`.
    pub fn new(weights: Vec<f64>, locs: Vec<f64>, scale2: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != locs.len() || weights.len() != scale2.len() {
            return Err(Error::InvalidParameter("mixture parts have mismatched lengths".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("mixing proportions must lie on the simplex".into()));
        }
        if locs.iter().any(|l| !l.is_finite()) || scale2.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("component parameters must be finite".into()));
        }
        Ok(LogNormalMixture {
            weights,
            locs,
            scales: scale2.iter().map(|s| s.sqrt()).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn standardise(&self, k: usize, log_y: f64) -> f64 {
        let s = self.scales[k];
        if s > 0.0 {
            (log_y - self.locs[k]) / s
        } else if log_y >= self.locs[k] {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let ly = y.ln();
        (0..self.weights.len()).map(|k| self.weights[k] * norm_cdf(self.standardise(k, ly))).sum::<f64>().min(1.0)
    }

    /// `1 - F(y)` computed from the component survival functions.
    pub fn sf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        let ly = y.ln();
        (0..self.weights.len()).map(|k| self.weights[k] * norm_sf(self.standardise(k, ly))).sum::<f64>().min(1.0)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let ly = y.ln();
        (0..self.weights.len())
            .filter(|&k| self.scales[k] > 0.0)
            .map(|k| self.weights[k] * norm_pdf(self.standardise(k, ly)) / (self.scales[k] * y))
            .sum()
    }

    /// Probability of `[lo, hi)` under component `k`.
    pub fn component_bin_probability(&self, k: usize, lo: f64, hi: f64) -> f64 {
        let a = if lo <= 0.0 { f64::NEG_INFINITY } else { self.standardise(k, lo.ln()) };
        let b = self.standardise(k, hi.ln());
        norm_interval(a, b)
    }

    pub fn bin_probability(&self, lo: f64, hi: f64) -> f64 {
        (0..self.weights.len()).map(|k| self.weights[k] * self.component_bin_probability(k, lo, hi)).sum()
    }

    /// `ln P(lo ≤ Y < hi)`, evaluated in log space when the linear value underflows.
    pub fn ln_bin_probability(&self, lo: f64, hi: f64) -> f64 {
        let p = self.bin_probability(lo, hi);
        if p > 1e-300 {
            return p.ln();
        }
        let terms: Vec<f64> = (0..self.weights.len())
            .filter(|&k| self.weights[k] > 0.0)
            .map(|k| {
                let a = if lo <= 0.0 { f64::NEG_INFINITY } else { self.standardise(k, lo.ln()) };
                let b = self.standardise(k, hi.ln());
                self.weights[k].ln() + ln_norm_interval(a, b)
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Average income `Σ π_k exp(loc_k + σ²_k / 2)`.
    pub fn mean(&self) -> f64 {
        (0..self.weights.len())
            .map(|k| self.weights[k] * (self.locs[k] + 0.5 * self.scales[k] * self.scales[k]).exp())
            .sum()
    }

    /// Solve `F(y) = p` by bisection on `ln y` until the bracket is narrower than `tol`.
    ///
    /// The initial bracket spans the component quantiles at `p`, which always contains the root.
    pub fn quantile(&self, p: f64, tol: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) || !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("quantile needs p in (0,1), tol > 0 (p = {p}, tol = {tol})")));
        }
        let z = norm_quantile(p);
        let active = || (0..self.weights.len()).filter(|&k| self.weights[k] > 0.0);
        let mut lo = active().map(|k| self.locs[k] + self.scales[k] * z).fold(f64::INFINITY, f64::min);
        let mut hi = active().map(|k| self.locs[k] + self.scales[k] * z).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Ok(lo.exp());
        }
        let mut expansions = 0;
        while self.cdf(lo.exp()) > p || self.cdf(hi.exp()) < p {
            lo -= 1.0;
            hi += 1.0;
            expansions += 1;
            if expansions > 60 {
                return Err(Error::numerical(
                    "mixture quantile",
                    format!("could not bracket p = {p} (last bracket [{}, {}])", lo.exp(), hi.exp()),
                ));
            }
        }
        for _ in 0..400 {
            if hi.exp() - lo.exp() <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid.exp()) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    pub fn median(&self, tol: f64) -> Result<f64> {
        self.quantile(0.5, tol)
    }

    /// `∫_q^∞ (1 - F(z)) dz` in closed form.
    fn upper_tail_integral(&self, q: f64) -> f64 {
        let lq = q.ln();
        (0..self.weights.len())
            .map(|k| {
                let (loc, s) = (self.locs[k], self.scales[k]);
                let part = if s > 0.0 {
                    let z = (lq - loc) / s;
                    (loc + 0.5 * s * s).exp() * norm_cdf(s - z) - q * norm_sf(z)
                } else {
                    (loc.exp() - q).max(0.0)
                };
                self.weights[k] * part
            })
            .sum()
    }

    /// Gini index `AI⁻¹ ∫ F (1 - F) dz`.
    ///
    /// The integral runs over `(0, z_max)` with `z_max` the quantile at
    /// `1 - 1e-9`, computed in log coordinates; the remaining upper tail is
    /// added in closed form from `∫ (1 - F)`.
    pub fn gini(&self, cfg: &QuadConfig) -> Result<f64> {
        let ai = self.mean();
        if !ai.is_finite() || ai <= 0.0 {
            return Err(Error::numerical("gini", format!("average income is {ai}")));
        }
        let v_lo = self.quantile(GINI_LOWER_TAIL, 1e-300)?.ln();
        let z_max = self.quantile(1.0 - GINI_UPPER_TAIL, 1e-300)?;
        let v_hi = z_max.ln();
        if !(v_hi > v_lo) {
            return Ok(0.0);
        }
        let breaks: Vec<f64> = (0..self.weights.len())
            .flat_map(|k| [self.locs[k] - self.scales[k], self.locs[k], self.locs[k] + self.scales[k]])
            .collect();
        let res = integrate(
            |v| {
                let y = v.exp();
                self.cdf(y) * self.sf(y) * y
            },
            v_lo,
            v_hi,
            &breaks,
            cfg,
        );
        if !res.converged {
            return Err(Error::numerical(
                "gini",
                format!("quadrature did not converge (value {}, error {})", res.value, res.error),
            ));
        }
        let tail = self.upper_tail_integral(z_max);
        Ok(((res.value + tail) / ai).clamp(0.0, 1.0))
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Grouped-data log-likelihood with a flag for the first bin that has
/// positive count but zero probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// `(area, period, bin)` of the first zero-mass bin with positive count.
    pub zero_mass: Option<(usize, usize, usize)>,
}

impl LogLikelihood {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// `Σ_{i,t,g} N_itg ln(F_it(Z_tg) - F_it(Z_t,g-1))` over observed cells.
pub fn grouped_log_likelihood(panel: &GroupedPanel, state: &ParamState) -> Result<LogLikelihood> {
    let mut value = 0.0;
    let mut zero_mass = None;
    for i in 0..panel.n_sampled() {
        for t in 0..panel.n_periods() {
            let Some(counts) = panel.counts(i, t) else { continue };
            if counts.iter().all(|&c| c == 0) {
                continue;
            }
            let mix = state.mixture(panel.x(i, t), &state.mixing_proportions(i, t))?;
            let bounds = panel.classes().bounds(t);
            for (g, &n) in counts.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let lp = mix.ln_bin_probability(bounds[g], bounds[g + 1]);
                if lp == f64::NEG_INFINITY && zero_mass.is_none() {
                    zero_mass = Some((i, t, g));
                }
                value += n as f64 * lp;
            }
        }
    }
    Ok(LogLikelihood { value, zero_mass })
}

/// Average income of a cell with covariates `x` and proportions `weights`.
pub fn average_income(state: &ParamState, weights: &[f64], x: &[f64]) -> f64 {
    state
        .components
        .iter()
        .zip(weights)
        .map(|(c, w)| w * (c.location(x) + 0.5 * c.sigma2).exp())
        .sum()
}

pub fn median_income(state: &ParamState, weights: &[f64], x: &[f64], tol: f64) -> Result<f64> {
    state.mixture(x, weights)?.median(tol)
}

pub fn gini_index(state: &ParamState, weights: &[f64], x: &[f64], cfg: &QuadConfig) -> Result<f64> {
    state.mixture(x, weights)?.gini(cfg)
}
