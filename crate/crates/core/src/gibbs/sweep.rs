//! One Gibbs sweep over the augmented posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::conditionals::{
    update_alpha, update_eta, update_eta0, update_mu, update_rho, update_tau, update_u, Augmentation,
    TemporalPrior,
};
use super::grid::RhoGrid;
use crate::error::{Error, Result};
use crate::mixture::log_sum_exp;
use crate::model::{GroupedPanel, ModelConfig, ParamState, Priors, Variant};
use crate::rng::{
    sample_inverse_gamma, sample_multinomial, sample_mvn_precision, sample_polya_gamma, TruncatedNormal,
};
use crate::special::ln_norm_interval;

/// Observed cell with at least one household.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRef {
    pub area: usize,
    pub period: usize,
    pub total: u32,
    /// Start of this cell's `[bin][component]` block in [`LatentState::counts`].
    pub offset: usize,
}

/// Augmentation variables of the most recent sweep.
#[derive(Debug, Clone, Default)]
pub struct LatentState {
    pub cells: Vec<CellRef>,
    pub n_components: usize,
    /// `s_itgk`, laid out cell by cell, then bin, then component.
    pub counts: Vec<u32>,
    /// `ω_itk` for the non-reference components, `[cell][k - 1]`.
    pub omega: Vec<f64>,
}

impl LatentState {
    /// Component counts of bin `g` of cell `c`.
    pub fn bin_counts(&self, c: usize, g: usize) -> &[u32] {
        let start = self.cells[c].offset + g * self.n_components;
        &self.counts[start..start + self.n_components]
    }

    /// `Σ_g s_itgk` for cell `c`.
    pub fn component_total(&self, c: usize, k: usize, n_bins: usize) -> u32 {
        (0..n_bins).map(|g| self.bin_counts(c, g)[k]).sum()
    }
}

/// Scratch state reused across sweeps of one panel.
#[derive(Debug, Clone)]
pub struct SweepWorkspace {
    latent: LatentState,
    log_bounds: Vec<Vec<f64>>,
    aug: Augmentation,
}

impl SweepWorkspace {
    pub fn new(panel: &GroupedPanel, n_components: usize) -> Self {
        let mut cells = Vec::new();
        let mut offset = 0;
        for (i, t) in panel.observed_cells() {
            cells.push(CellRef {
                area: i,
                period: t,
                total: panel.total(i, t),
                offset,
            });
            offset += panel.classes().n_bins(t) * n_components;
        }
        let omega = vec![f64::NAN; cells.len() * n_components.saturating_sub(1)];
        SweepWorkspace {
            latent: LatentState {
                cells,
                n_components,
                counts: vec![0; offset],
                omega,
            },
            log_bounds: (0..panel.n_periods()).map(|t| panel.classes().log_bounds(t)).collect(),
            aug: Augmentation::default(),
        }
    }

    pub fn latent(&self) -> &LatentState {
        &self.latent
    }
}

fn predictors_with_reference(state: &ParamState, i: usize, t: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    out.extend(state.effects.iter().map(|e| e.u[i] + e.eta[t]));
}

/// Draw `s_itgk` for every observed bin from its multinomial full conditional.
pub fn update_component_counts<R: Rng + ?Sized>(
    rng: &mut R,
    panel: &GroupedPanel,
    state: &ParamState,
    ws: &mut SweepWorkspace,
) -> Result<()> {
    let k_total = state.n_components();
    let mut lambda = Vec::with_capacity(k_total);
    let mut lw = vec![0.0; k_total];
    let mut w = vec![0.0; k_total];
    for c in 0..ws.latent.cells.len() {
        let cell = ws.latent.cells[c];
        let (i, t) = (cell.area, cell.period);
        let counts = panel.counts(i, t).expect("observed cell");
        let bounds = &ws.log_bounds[t];
        if k_total == 1 {
            for (g, &n) in counts.iter().enumerate() {
                ws.latent.counts[cell.offset + g] = n;
            }
            continue;
        }
        predictors_with_reference(state, i, t, &mut lambda);
        let norm = log_sum_exp(&lambda);
        let x = panel.x(i, t);
        let locs: Vec<f64> = state.components.iter().map(|p| p.location(x)).collect();
        let sds: Vec<f64> = state.components.iter().map(|p| p.sigma2.sqrt()).collect();
        for (g, &n) in counts.iter().enumerate() {
            let slot = cell.offset + g * k_total;
            if n == 0 {
                ws.latent.counts[slot..slot + k_total].iter_mut().for_each(|s| *s = 0);
                continue;
            }
            for k in 0..k_total {
                let a = (bounds[g] - locs[k]) / sds[k];
                let b = (bounds[g + 1] - locs[k]) / sds[k];
                lw[k] = lambda[k] - norm + ln_norm_interval(a, b);
            }
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::numerical(
                    format!("area {i}, period {t}, bin {g}"),
                    "no component gives this bin positive probability",
                ));
            }
            for k in 0..k_total {
                w[k] = (lw[k] - max).exp();
            }
            let draw = sample_multinomial(rng, n, &w)?;
            ws.latent.counts[slot..slot + k_total].copy_from_slice(&draw);
        }
    }
    Ok(())
}

/// Draw `ω_itk ~ PG(N_it, λ_itk - C_itk)` for component `k ≥ 1` and collect
/// the terms its effect conditionals need.
pub fn augment_component<R: Rng + ?Sized>(
    rng: &mut R,
    panel: &GroupedPanel,
    state: &ParamState,
    k: usize,
    pg_exact_max: u32,
    ws: &mut SweepWorkspace,
) -> Result<()> {
    let k_total = state.n_components();
    let mut lambda = Vec::with_capacity(k_total);
    let mut others = Vec::with_capacity(k_total);
    ws.aug.clear();
    for c in 0..ws.latent.cells.len() {
        let cell = ws.latent.cells[c];
        predictors_with_reference(state, cell.area, cell.period, &mut lambda);
        others.clear();
        others.extend(lambda.iter().enumerate().filter(|(l, _)| *l != k).map(|(_, v)| *v));
        let offset = log_sum_exp(&others);
        let psi = lambda[k] - offset;
        let omega = sample_polya_gamma(rng, cell.total, psi, pg_exact_max)?;
        let n_bins = panel.classes().n_bins(cell.period);
        let s = ws.latent.component_total(c, k, n_bins) as f64;
        ws.latent.omega[c * (k_total - 1) + k - 1] = omega;
        ws.aug.push(cell.area, cell.period, omega, s - 0.5 * cell.total as f64, offset);
    }
    Ok(())
}

/// Streaming regression statistics of one component's latent log-incomes,
/// held as residuals from the location used to draw them.
#[derive(Debug, Clone)]
struct ResidualStats {
    n: f64,
    xtx: DMatrix<f64>,
    xtr: DVector<f64>,
    rr: f64,
}

impl ResidualStats {
    fn new(p: usize) -> Self {
        ResidualStats {
            n: 0.0,
            xtx: DMatrix::zeros(p, p),
            xtr: DVector::zeros(p),
            rr: 0.0,
        }
    }
}

/// Draw latent log-incomes given the component counts, then `β_k` and `σ²_k`
/// for every component from their conjugate conditionals.
pub fn update_components<R: Rng + ?Sized>(
    rng: &mut R,
    panel: &GroupedPanel,
    state: &mut ParamState,
    priors: &Priors,
    ws: &SweepWorkspace,
) -> Result<()> {
    let k_total = state.n_components();
    let p = panel.dim();
    let mut stats: Vec<ResidualStats> = (0..k_total).map(|_| ResidualStats::new(p)).collect();
    let mut sum_r = vec![0.0; k_total];
    let mut n_k = vec![0u32; k_total];
    for cell in &ws.latent.cells {
        let (i, t) = (cell.area, cell.period);
        let x = panel.x(i, t);
        let bounds = &ws.log_bounds[t];
        sum_r.iter_mut().for_each(|v| *v = 0.0);
        n_k.iter_mut().for_each(|v| *v = 0);
        for k in 0..k_total {
            let comp = &state.components[k];
            let loc = comp.location(x);
            let sd = comp.sigma2.sqrt();
            let st = &mut stats[k];
            for g in 0..bounds.len() - 1 {
                let s = ws.latent.counts[cell.offset + g * k_total + k];
                if s == 0 {
                    continue;
                }
                let law = TruncatedNormal::new(loc, sd, bounds[g], bounds[g + 1])
                    .map_err(|err| err.within(&format!("latent incomes of area {i}, period {t}, bin {g}")))?;
                for _ in 0..s {
                    let r = law.sample(rng) - loc;
                    sum_r[k] += r;
                    st.rr += r * r;
                }
                n_k[k] += s;
            }
        }
        for k in 0..k_total {
            if n_k[k] == 0 {
                continue;
            }
            let st = &mut stats[k];
            let w = n_k[k] as f64;
            st.n += w;
            for a in 0..p {
                st.xtr[a] += x[a] * sum_r[k];
                for b in 0..p {
                    st.xtx[(a, b)] += w * x[a] * x[b];
                }
            }
        }
    }
    for (k, st) in stats.into_iter().enumerate() {
        let comp = &mut state.components[k];
        let beta_old = DVector::from_row_slice(&comp.beta);
        let inv_s2 = 1.0 / comp.sigma2;
        // X'y = X'r + X'X β_old
        let xty = &st.xtr + &st.xtx * &beta_old;
        let mut precision = &st.xtx * inv_s2;
        for a in 0..p {
            precision[(a, a)] += 1.0 / priors.c_beta;
        }
        let beta = sample_mvn_precision(rng, &(xty * inv_s2), &precision)
            .map_err(|err| err.within(&format!("coefficients of component {}", k + 1)))?;
        let delta = &beta - &beta_old;
        let rss = (st.rr - 2.0 * delta.dot(&st.xtr) + delta.dot(&(&st.xtx * &delta))).max(0.0);
        comp.beta.copy_from_slice(beta.as_slice());
        comp.sigma2 = sample_inverse_gamma(rng, priors.a_sigma + 0.5 * st.n, priors.b_sigma + 0.5 * rss)?;
    }
    Ok(())
}

/// Run one full sweep, updating `state` in place.
///
/// For each non-reference component the Pólya–Gamma augmentation is drawn
/// right before that component's spatial and temporal effects, because its
/// offsets depend on the other components' current effects.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    rng: &mut R,
    panel: &GroupedPanel,
    grid: &RhoGrid,
    config: &ModelConfig,
    state: &mut ParamState,
    ws: &mut SweepWorkspace,
) -> Result<()> {
    let temporal = TemporalPrior::of(config.variant);
    let priors = &config.priors;
    update_component_counts(rng, panel, state, ws).map_err(|e| e.within("component counts"))?;
    for k in 1..state.n_components() {
        augment_component(rng, panel, state, k, config.pg_exact_max, ws)
            .map_err(|e| e.within(&format!("Polya-Gamma draws of component {}", k + 1)))?;
        let e = &mut state.effects[k - 1];
        update_u(rng, e, grid, &ws.aug).map_err(|err| err.within(&format!("component {}", k + 1)))?;
        update_eta(rng, e, &ws.aug, temporal);
    }
    for (idx, e) in state.effects.iter_mut().enumerate() {
        let name = format!("component {}", idx + 2);
        update_mu(rng, e, grid, priors);
        update_tau(rng, e, grid, priors).map_err(|err| err.within(&name))?;
        update_alpha(rng, e, priors, temporal).map_err(|err| err.within(&name))?;
        if temporal == TemporalPrior::RandomWalk {
            update_eta0(rng, e, priors);
        }
        if config.variant != Variant::TwoWay {
            update_rho(rng, e, grid).map_err(|err| err.within(&name))?;
        }
    }
    update_components(rng, panel, state, priors, ws).map_err(|e| e.within("component distributions"))
}
