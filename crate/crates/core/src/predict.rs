//! Spatial interpolation of non-sampled areas, temporal prediction, and
//! posterior summaries of the income measures.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{RhoGrid, TemporalPrior};
use crate::mixture::mixing_proportions;
use crate::model::{GroupedPanel, MixingEffects, ParamState, PosteriorDraws};
use crate::quad::QuadConfig;
use crate::rng::{sample_multinomial, sample_normal, standard_normal, RngStream};

/// Conditional mean and covariance of the non-sampled effects of one component
/// given its sampled effects, `None` when every area is sampled.
pub fn interpolation_moments(e: &MixingEffects, grid: &RhoGrid) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let f = grid.interpolation(e.rho_index)?;
    let centred = DVector::from_iterator(e.u.len(), e.u.iter().map(|u| u - e.mu));
    let mean = (&f.gain * centred).map(|v| e.mu - v);
    let cov = f.chol22.inverse() / e.tau;
    Some((mean, cov))
}

/// One draw of `u*` from `N(μι − Q22⁻¹Q21(u − μι), τ⁻¹Q22⁻¹)` at the stored
/// grid point of `ρ`. Empty when every area is sampled.
pub fn interpolate_spatial<R: Rng + ?Sized>(rng: &mut R, e: &MixingEffects, grid: &RhoGrid) -> Vec<f64> {
    let Some(f) = grid.interpolation(e.rho_index) else {
        return Vec::new();
    };
    let centred = DVector::from_iterator(e.u.len(), e.u.iter().map(|u| u - e.mu));
    let shift = &f.gain * centred;
    let z = DVector::from_fn(f.chol22.dim(), |_, _| standard_normal(rng));
    // L⁻ᵀ z has covariance (L Lᵀ)⁻¹ = Q22⁻¹
    let noise = f.chol22.solve_upper(&z);
    let scale = e.tau.sqrt().recip();
    (0..shift.len()).map(|i| e.mu - shift[i] + scale * noise[i]).collect()
}

/// Temporal effect `horizon` survey intervals after the last fitted period.
///
/// Under the random walk the draw is `N(η_T, horizon · α)`; with independent
/// period effects a new period is `N(0, α)` whatever the horizon.
pub fn predict_temporal<R: Rng + ?Sized>(
    rng: &mut R,
    e: &MixingEffects,
    horizon: f64,
    prior: TemporalPrior,
) -> Result<f64> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    match prior {
        TemporalPrior::RandomWalk => {
            let last = e.eta.last().copied().unwrap_or(e.eta0);
            Ok(sample_normal(rng, last, horizon * e.alpha))
        }
        TemporalPrior::Independent => Ok(sample_normal(rng, 0.0, e.alpha)),
        TemporalPrior::Absent => Err(Error::Config(
            "temporal prediction needs a model with period effects".into(),
        )),
    }
}

/// Effects of every area and of fitted plus future periods for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedEffects {
    /// `u[k - 1][i]` for all areas, sampled first.
    pub u: Vec<Vec<f64>>,
    /// `eta[k - 1][t]` for fitted and predicted periods.
    pub eta: Vec<Vec<f64>>,
}

impl CompletedEffects {
    pub fn mixing_proportions(&self, i: usize, t: usize) -> Vec<f64> {
        let lambda: Vec<f64> = self.u.iter().zip(&self.eta).map(|(u, eta)| u[i] + eta[t]).collect();
        mixing_proportions(&lambda)
    }
}

/// Extend one state to all areas and `steps.len()` future periods. The
/// first future period lies `steps[0]` intervals after the last fitted one,
/// each later period `steps[j]` after its predecessor.
pub fn complete_effects<R: Rng + ?Sized>(
    rng: &mut R,
    state: &ParamState,
    grid: &RhoGrid,
    prior: TemporalPrior,
    steps: &[f64],
) -> Result<CompletedEffects> {
    let mut u = Vec::with_capacity(state.effects.len());
    let mut eta = Vec::with_capacity(state.effects.len());
    for e in &state.effects {
        let mut all = e.u.clone();
        all.extend(interpolate_spatial(rng, e, grid));
        u.push(all);
        let mut path = e.eta.clone();
        let mut walker = e.clone();
        for &step in steps {
            let next = predict_temporal(rng, &walker, step, prior)?;
            walker.eta.push(next);
            path.push(next);
        }
        eta.push(path);
    }
    Ok(CompletedEffects { u, eta })
}

/// Where a summarised cell sits relative to the fitted data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    /// Sampled area in a fitted period.
    InSample,
    /// Non-sampled area in a fitted period.
    Spatial,
    /// Any area in a period after the fitted ones.
    Temporal,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::InSample => "in-sample",
            Scope::Spatial => "spatial",
            Scope::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-sample" => Ok(Scope::InSample),
            "spatial" => Ok(Scope::Spatial),
            "temporal" => Ok(Scope::Temporal),
            other => Err(Error::Config(format!("unknown scope '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    AverageIncome,
    MedianIncome,
    Gini,
    /// Posterior predictive count of one income class.
    BinCount(usize),
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::AverageIncome => "ai",
            Quantity::MedianIncome => "mi",
            Quantity::Gini => "gini",
            Quantity::BinCount(_) => "bin",
        }
    }

    pub fn bin(self) -> Option<usize> {
        match self {
            Quantity::BinCount(g) => Some(g),
            _ => None,
        }
    }
}

/// Which measures to summarise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantitySet {
    pub average: bool,
    pub median: bool,
    pub gini: bool,
    pub bin_counts: bool,
}

impl QuantitySet {
    pub const ALL: QuantitySet = QuantitySet {
        average: true,
        median: true,
        gini: true,
        bin_counts: true,
    };

    pub const AVERAGE: QuantitySet = QuantitySet {
        average: true,
        median: false,
        gini: false,
        bin_counts: false,
    };

    /// Parse a comma-separated list such as `ai,mi,gini,bins`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut set = QuantitySet {
            average: false,
            median: false,
            gini: false,
            bin_counts: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "ai" => set.average = true,
                "mi" => set.median = true,
                "gini" => set.gini = true,
                "bin" | "bins" => set.bin_counts = true,
                "all" => set = QuantitySet::ALL,
                other => return Err(Error::Config(format!("unknown quantity '{other}'"))),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    /// Credible level of the equal-tailed intervals.
    pub level: f64,
    pub quantities: QuantitySet,
    /// Steps (in survey intervals) of periods predicted after the fitted ones.
    pub future_steps: Vec<f64>,
    pub quad: QuadConfig,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            level: 0.95,
            quantities: QuantitySet::ALL,
            future_steps: Vec::new(),
            quad: QuadConfig::default(),
        }
    }
}

/// Household totals `N_it` for cells outside the fitted counts, used for
/// predictive class counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellTotals {
    totals: HashMap<(usize, usize), u32>,
}

impl CellTotals {
    pub fn new() -> Self {
        CellTotals::default()
    }

    pub fn insert(&mut self, area: usize, period: usize, total: u32) {
        self.totals.insert((area, period), total);
    }

    pub fn get(&self, area: usize, period: usize) -> Option<u32> {
        self.totals.get(&(area, period)).copied()
    }
}

/// Posterior summary of one quantity in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub area: usize,
    pub period: usize,
    pub scope: Scope,
    pub quantity: Quantity,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub level: f64,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn rows_for(&self, quantity: Quantity) -> impl Iterator<Item = &SummaryRow> {
        self.rows.iter().filter(move |r| r.quantity == quantity)
    }

    pub fn get(&self, area: usize, period: usize, quantity: Quantity) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.area == area && r.period == period && r.quantity == quantity)
    }
}

/// Mean, standard deviation and equal-tailed interval of a sample.
///
/// The sample is sorted first so the result does not depend on its order.
pub fn summarize_values(values: &mut [f64], level: f64) -> Result<(f64, f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("cannot summarise an empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("interval level must lie in (0, 1), got {level}")));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let tail = 0.5 * (1.0 - level);
    Ok((mean, sd, sorted_quantile(values, tail), sorted_quantile(values, 1.0 - tail)))
}

/// Linear interpolation between order statistics at position `p (n - 1)`.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summaries of the requested measures for every area over the fitted
/// periods and any future ones.
///
/// Chains fitted to a single period (the spatial-only variant) contribute the
/// rows of their own period. Non-sampled areas and future periods use
/// interpolated and predicted effects, drawn once per stored state from
/// `rng`; predictive class counts draw from per-cell child streams, so the
/// result does not depend on how the cells are scheduled.
pub fn summarize(
    chains: &[PosteriorDraws],
    panel: &GroupedPanel,
    grid: &RhoGrid,
    opts: &SummaryOptions,
    totals: Option<&CellTotals>,
    rng: &mut RngStream,
) -> Result<SummaryTable> {
    if chains.is_empty() || chains.iter().any(PosteriorDraws::is_empty) {
        return Err(Error::InvalidParameter("no posterior draws to summarise".into()));
    }
    if grid.n_areas() != panel.n_areas() {
        return Err(Error::Config(format!(
            "grid covers {} areas, panel {}",
            grid.n_areas(),
            panel.n_areas()
        )));
    }
    let n_future = opts.future_steps.len();
    let mut rows = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        let prior = TemporalPrior::of(chain.config.variant);
        if n_future > 0 && (chain.period.is_some() || prior == TemporalPrior::Absent) {
            return Err(Error::Config("future periods need a model with period effects".into()));
        }
        let periods: Vec<usize> = match chain.period {
            Some(t) => vec![t],
            None => (0..panel.n_periods() + n_future).collect(),
        };
        let last = *periods.last().unwrap_or(&0);
        if last >= panel.covariates().n_periods() {
            return Err(Error::data(
                "covariates",
                format!("period {last} requested but covariates cover {}", panel.covariates().n_periods()),
            ));
        }
        let mut chain_rng = rng.split(c as u64);
        let completed = chain
            .states
            .iter()
            .map(|s| complete_effects(&mut chain_rng, s, grid, prior, &opts.future_steps))
            .collect::<Result<Vec<_>>>()?;
        let count_rng = chain_rng.split(u64::MAX);
        let cells: Vec<(usize, usize, usize)> = (0..panel.n_areas())
            .flat_map(|i| periods.iter().enumerate().map(move |(local, &t)| (i, local, t)))
            .collect();
        let chain_rows: Vec<Vec<SummaryRow>> = cells
            .par_iter()
            .enumerate()
            .map(|(idx, &(i, local, t))| {
                let scope = if t >= panel.n_periods() {
                    Scope::Temporal
                } else if i >= panel.n_sampled() {
                    Scope::Spatial
                } else {
                    Scope::InSample
                };
                let total = match panel.counts(i, t) {
                    Some(_) => Some(panel.total(i, t)),
                    None => totals.and_then(|tt| tt.get(i, t)),
                };
                let mut cell_rng = count_rng.split(idx as u64);
                summarize_cell(chain, &completed, panel, i, local, t, scope, total, opts, &mut cell_rng)
                    .map_err(|e| e.within(&format!("area {i} period {t}")))
            })
            .collect::<Result<_>>()?;
        rows.extend(chain_rows.into_iter().flatten());
    }
    rows.sort_by_key(|r| (r.area, r.period, r.quantity));
    Ok(SummaryTable { level: opts.level, rows })
}

#[allow(clippy::too_many_arguments)]
fn summarize_cell(
    chain: &PosteriorDraws,
    completed: &[CompletedEffects],
    panel: &GroupedPanel,
    i: usize,
    local: usize,
    t: usize,
    scope: Scope,
    total: Option<u32>,
    opts: &SummaryOptions,
    rng: &mut RngStream,
) -> Result<Vec<SummaryRow>> {
    let q = opts.quantities;
    let x = panel.x(i, t);
    let bounds = panel.classes().bounds(t);
    let n_bins = bounds.len() - 1;
    let s_total = chain.states.len();
    let mut ai = Vec::with_capacity(if q.average { s_total } else { 0 });
    let mut mi = Vec::new();
    let mut gini = Vec::new();
    let with_bins = q.bin_counts && total.is_some();
    let mut bins = vec![Vec::new(); if with_bins { n_bins } else { 0 }];
    for (state, eff) in chain.states.iter().zip(completed) {
        let weights = eff.mixing_proportions(i, local);
        let mix = state.mixture(x, &weights)?;
        let mean = mix.mean();
        if q.average {
            ai.push(mean);
        }
        if q.median {
            mi.push(mix.median(1e-10 * mean)?);
        }
        if q.gini {
            gini.push(mix.gini(&opts.quad)?);
        }
        if let (true, Some(n)) = (with_bins, total) {
            let probs: Vec<f64> = (0..n_bins).map(|g| mix.bin_probability(bounds[g], bounds[g + 1])).collect();
            let draw = sample_multinomial(rng, n, &probs)?;
            for (g, d) in draw.into_iter().enumerate() {
                bins[g].push(d as f64);
            }
        }
    }
    let mut out = Vec::new();
    let mut push = |quantity: Quantity, values: &mut Vec<f64>| -> Result<()> {
        let (mean, sd, lower, upper) = summarize_values(values, opts.level)?;
        out.push(SummaryRow {
            area: i,
            period: t,
            scope,
            quantity,
            mean,
            sd,
            lower,
            upper,
        });
        Ok(())
    };
    if q.average {
        push(Quantity::AverageIncome, &mut ai)?;
    }
    if q.median {
        push(Quantity::MedianIncome, &mut mi)?;
    }
    if q.gini {
        push(Quantity::Gini, &mut gini)?;
    }
    for (g, values) in bins.iter_mut().enumerate() {
        push(Quantity::BinCount(g), values)?;
    }
    Ok(out)
}
