//! Full conditionals of the mixing-proportion effects of one component.

use nalgebra::DVector;
use rand::Rng;

use super::grid::RhoGrid;
use crate::error::{Error, Result};
use crate::model::{MixingEffects, Priors, Variant};
use crate::rng::{
    sample_categorical_log, sample_gamma, sample_inverse_gamma, sample_mvn_precision, sample_normal,
};

/// Prior on the temporal effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalPrior {
    /// `η_t | η_{t-1} ~ N(η_{t-1}, α)` started at `η_0`.
    RandomWalk,
    /// `η_t ~ N(0, α)` independently.
    Independent,
    /// No temporal effects.
    Absent,
}

impl TemporalPrior {
    pub fn of(variant: Variant) -> Self {
        match variant {
            Variant::SarRw => TemporalPrior::RandomWalk,
            Variant::TwoWay => TemporalPrior::Independent,
            Variant::SpatialOnly => TemporalPrior::Absent,
        }
    }
}

/// Pólya–Gamma augmentation of one component's logistic likelihood over the
/// observed cells.
#[derive(Debug, Clone, Default)]
pub struct Augmentation {
    /// `(area, period)` of each observed cell.
    pub cells: Vec<(usize, usize)>,
    pub omega: Vec<f64>,
    /// `s_itk - N_it / 2`.
    pub kappa: Vec<f64>,
    /// `C_itk = log Σ_{l≠k} exp(λ_itl)`.
    pub offset: Vec<f64>,
}

impl Augmentation {
    pub fn clear(&mut self) {
        self.cells.clear();
        self.omega.clear();
        self.kappa.clear();
        self.offset.clear();
    }

    pub fn push(&mut self, i: usize, t: usize, omega: f64, kappa: f64, offset: f64) {
        self.cells.push((i, t));
        self.omega.push(omega);
        self.kappa.push(kappa);
        self.offset.push(offset);
    }
}

/// Joint draw of the sampled spatial effects `u_k` (centred on `μ_k`).
pub fn update_u<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, grid: &RhoGrid, aug: &Augmentation) -> Result<()> {
    let m = e.u.len();
    let j = e.rho_index;
    let mut precision = grid.q11(j) * e.tau;
    let mut h = grid.q11_iota(j) * (e.mu * e.tau);
    for (c, &(i, t)) in aug.cells.iter().enumerate() {
        let w = aug.omega[c];
        precision[(i, i)] += w;
        h[i] += aug.kappa[c] - w * (e.eta[t] - aug.offset[c]);
    }
    debug_assert_eq!(h.len(), m);
    let u = sample_mvn_precision(rng, &h, &precision).map_err(|err| err.within("spatial effects"))?;
    e.u.copy_from_slice(u.as_slice());
    Ok(())
}

/// Single-site draws of the temporal effects in period order.
pub fn update_eta<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, aug: &Augmentation, prior: TemporalPrior) {
    if prior == TemporalPrior::Absent {
        return;
    }
    let n = e.eta.len();
    let mut prec = vec![0.0; n];
    let mut lin = vec![0.0; n];
    for (c, &(i, t)) in aug.cells.iter().enumerate() {
        let w = aug.omega[c];
        prec[t] += w;
        lin[t] += aug.kappa[c] - w * (e.u[i] - aug.offset[c]);
    }
    let inv_alpha = 1.0 / e.alpha;
    for t in 0..n {
        let (p0, center) = match prior {
            TemporalPrior::RandomWalk => {
                let before = if t == 0 { e.eta0 } else { e.eta[t - 1] };
                if t + 1 < n {
                    (2.0 * inv_alpha, before + e.eta[t + 1])
                } else {
                    (inv_alpha, before)
                }
            }
            _ => (inv_alpha, 0.0),
        };
        let v = 1.0 / (prec[t] + p0);
        e.eta[t] = sample_normal(rng, v * (lin[t] + center * inv_alpha), v);
    }
}

pub fn update_mu<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, grid: &RhoGrid, priors: &Priors) {
    let j = e.rho_index;
    let q_iota = grid.q11_iota(j);
    let v = 1.0 / (e.tau * q_iota.sum() + 1.0 / priors.c_mu);
    let mean = v * e.tau * DVector::from_row_slice(&e.u).dot(&q_iota);
    e.mu = sample_normal(rng, mean, v);
}

pub fn update_tau<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, grid: &RhoGrid, priors: &Priors) -> Result<()> {
    let v: Vec<f64> = e.u.iter().map(|u| u - e.mu).collect();
    let q = grid.quad_form(e.rho_index, &v).max(0.0);
    e.tau = sample_gamma(rng, priors.a_tau + 0.5 * v.len() as f64, priors.b_tau + 0.5 * q)?;
    Ok(())
}

/// Sum of squared increments `Σ_t (η_t - η_{t-1})²` (or `Σ η_t²` for
/// independent effects).
pub fn temporal_sum_of_squares(e: &MixingEffects, prior: TemporalPrior) -> f64 {
    match prior {
        TemporalPrior::RandomWalk => {
            let mut prev = e.eta0;
            let mut ss = 0.0;
            for &x in &e.eta {
                ss += (x - prev).powi(2);
                prev = x;
            }
            ss
        }
        TemporalPrior::Independent => e.eta.iter().map(|x| x * x).sum(),
        TemporalPrior::Absent => 0.0,
    }
}

pub fn update_alpha<R: Rng + ?Sized>(
    rng: &mut R,
    e: &mut MixingEffects,
    priors: &Priors,
    prior: TemporalPrior,
) -> Result<()> {
    if prior == TemporalPrior::Absent {
        return Ok(());
    }
    let ss = temporal_sum_of_squares(e, prior);
    e.alpha = sample_inverse_gamma(rng, priors.a_alpha + 0.5 * e.eta.len() as f64, priors.b_alpha + 0.5 * ss)?;
    Ok(())
}

pub fn update_eta0<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, priors: &Priors) {
    let v = 1.0 / (1.0 / e.alpha + 1.0 / priors.c_eta);
    let first = e.eta.first().copied().unwrap_or(0.0);
    e.eta0 = sample_normal(rng, v * first / e.alpha, v);
}

/// Unnormalised log full-conditional of `ρ` at every grid point.
pub fn rho_log_weights(e: &MixingEffects, grid: &RhoGrid) -> Vec<f64> {
    let v: Vec<f64> = e.u.iter().map(|u| u - e.mu).collect();
    grid.quad_forms(&v)
        .iter()
        .enumerate()
        .map(|(j, q)| 0.5 * grid.log_det(j) - 0.5 * e.tau * q)
        .collect()
}

/// Griddy Gibbs draw of `ρ` under a uniform prior.
pub fn update_rho<R: Rng + ?Sized>(rng: &mut R, e: &mut MixingEffects, grid: &RhoGrid) -> Result<()> {
    let lw = rho_log_weights(e, grid);
    let j = sample_categorical_log(rng, &lw).map_err(|err| match err {
        Error::Numerical { message, .. } => Error::numerical("spatial correlation", message),
        other => other,
    })?;
    e.rho_index = j;
    e.rho = grid.point(j);
    Ok(())
}
