//! Synthetic panels from the two simulation designs, the per-cell grouped
//! maximum-likelihood log-normal fit, a crude direct estimator, and
//! RMSE/coverage metrics against the truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gibbs::bin_midpoint;
use crate::mixture::mixing_proportions;
use crate::model::{ComponentParams, Covariates, GroupedPanel, IncomeClasses, SpatialGraph};
use crate::predict::{CellTotals, Quantity, Scope, SummaryTable};
use crate::quad::QuadConfig;
use crate::rng::{sample_multinomial, standard_normal};
use crate::special::{ln_norm_interval, norm_pdf, norm_quantile};

/// Income class boundaries of the simulation designs.
pub const DESIGN_BOUNDS: [f64; 10] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, f64::INFINITY];

/// Component coefficients `(intercept, x1, x2)` and variances of both designs.
pub fn design_components() -> Vec<ComponentParams> {
    vec![
        ComponentParams {
            beta: vec![0.5, 0.0, 1.0],
            sigma2: 0.5,
        },
        ComponentParams {
            beta: vec![-0.5, 1.0, 0.0],
            sigma2: 0.5,
        },
        ComponentParams {
            beta: vec![2.0, -1.0, -1.0],
            sigma2: 0.5,
        },
    ]
}

/// Problem size and the free design choices shared by both settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSizes {
    pub n_areas: usize,
    pub n_sampled: usize,
    /// Periods used for fitting.
    pub n_periods: usize,
    /// Periods generated after the fitted ones for prediction checks.
    pub holdout_periods: usize,
    /// Household totals are uniform integers on this inclusive range.
    pub total_range: (u32, u32),
    /// Areas closer than this are neighbours.
    pub neighbour_radius: f64,
    /// Covariates other than the intercept are uniform on this range.
    pub covariate_range: (f64, f64),
}

impl SimulationSizes {
    /// Full-scale design: 200 areas, 150 sampled, 20 fitted periods plus one.
    pub fn full() -> Self {
        SimulationSizes {
            n_areas: 200,
            n_sampled: 150,
            n_periods: 20,
            holdout_periods: 1,
            total_range: (100, 500),
            neighbour_radius: 0.2,
            covariate_range: (0.0, 1.0),
        }
    }

    /// Reduced design for desk checks: 60 areas, 45 sampled, 8 fitted periods plus one.
    pub fn desk() -> Self {
        SimulationSizes {
            n_areas: 60,
            n_sampled: 45,
            n_periods: 8,
            holdout_periods: 1,
            total_range: (100, 300),
            ..SimulationSizes::full()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sampled == 0 || self.n_sampled > self.n_areas {
            return Err(Error::Config(format!("{} sampled areas out of {}", self.n_sampled, self.n_areas)));
        }
        if self.n_periods == 0 {
            return Err(Error::Config("at least one fitted period is required".into()));
        }
        if self.total_range.0 > self.total_range.1 {
            return Err(Error::Config("household total range is empty".into()));
        }
        if !(self.covariate_range.1 >= self.covariate_range.0) || !(self.neighbour_radius >= 0.0) {
            return Err(Error::Config("invalid covariate range or neighbour radius".into()));
        }
        Ok(())
    }

    pub fn total_periods(&self) -> usize {
        self.n_periods + self.holdout_periods
    }
}

/// Setting 1: SAR spatial and random-walk temporal effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting1 {
    pub components: Vec<ComponentParams>,
    /// Per non-reference component.
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    /// SAR precision.
    pub tau: Vec<f64>,
    pub alpha: Vec<f64>,
    pub eta0: Vec<f64>,
}

impl Default for Setting1 {
    fn default() -> Self {
        Setting1 {
            components: design_components(),
            mu: vec![-0.2, 0.1],
            rho: vec![0.8, 0.8],
            tau: vec![0.1, 0.1],
            alpha: vec![0.2, 0.2],
            eta0: vec![0.0, 0.0],
        }
    }
}

/// Setting 2: deterministic spatial and temporal effects plus block effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting2 {
    pub components: Vec<ComponentParams>,
    pub mu: Vec<f64>,
    pub block_sd: f64,
    /// The square `(-1, 1)²` is cut into `blocks_per_side²` blocks.
    pub blocks_per_side: usize,
}

impl Default for Setting2 {
    fn default() -> Self {
        Setting2 {
            components: design_components(),
            mu: vec![-0.2, 0.1],
            block_sd: 0.2,
            blocks_per_side: 5,
        }
    }
}

/// Generated data with every quantity of the data-generating process.
///
/// Cells are indexed `i * total_periods + t` over all areas and all periods.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub coords: Vec<[f64; 2]>,
    pub graph: SpatialGraph,
    pub classes: IncomeClasses,
    pub covariates: Covariates,
    pub components: Vec<ComponentParams>,
    /// `spatial[k - 1][i]`, including any mean shift.
    pub spatial: Vec<Vec<f64>>,
    /// `temporal[k - 1][t]`.
    pub temporal: Vec<Vec<f64>>,
    /// Block of each area and `block_effects[k - 1][h]`, for the block design.
    pub blocks: Option<(Vec<usize>, Vec<Vec<f64>>)>,
    /// Mixing proportions over all `K` components per cell.
    pub proportions: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    pub median: Vec<f64>,
    pub gini: Vec<f64>,
    pub totals: Vec<u32>,
    pub counts: Vec<Vec<u32>>,
    pub n_sampled: usize,
    /// Periods used for fitting; the remaining ones are held out.
    pub n_periods: usize,
}

impl SyntheticTruth {
    pub fn n_areas(&self) -> usize {
        self.coords.len()
    }

    pub fn total_periods(&self) -> usize {
        self.covariates.n_periods()
    }

    pub fn cell(&self, i: usize, t: usize) -> usize {
        i * self.total_periods() + t
    }

    /// Counts of the sampled areas over the fitted periods, with covariates for every period.
    pub fn panel(&self) -> Result<GroupedPanel> {
        let counts = (0..self.n_sampled)
            .flat_map(|i| (0..self.n_periods).map(move |t| (i, t)))
            .map(|(i, t)| Some(self.counts[self.cell(i, t)].clone()))
            .collect();
        GroupedPanel::new(
            self.n_sampled,
            self.n_periods,
            self.classes.clone(),
            self.covariates.clone(),
            counts,
        )
    }

    /// Household totals of every cell, for predictive class counts outside the fitted data.
    pub fn cell_totals(&self) -> CellTotals {
        let mut totals = CellTotals::new();
        for i in 0..self.n_areas() {
            for t in 0..self.total_periods() {
                totals.insert(i, t, self.totals[self.cell(i, t)]);
            }
        }
        totals
    }

    pub fn cell_truths(&self) -> Vec<CellTruth> {
        (0..self.n_areas())
            .flat_map(|i| (0..self.total_periods()).map(move |t| (i, t)))
            .map(|(i, t)| {
                let c = self.cell(i, t);
                CellTruth {
                    area: i,
                    period: t,
                    average: self.average[c],
                    counts: self.counts[c].clone(),
                }
            })
            .collect()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Coordinates, neighbour graph, covariates and household totals.
struct Layout {
    coords: Vec<[f64; 2]>,
    graph: SpatialGraph,
    covariates: Covariates,
    totals: Vec<u32>,
}

fn layout<R: Rng + ?Sized>(rng: &mut R, sizes: &SimulationSizes, n_covariates: usize) -> Result<Layout> {
    sizes.validate()?;
    let m_all = sizes.n_areas;
    let t_all = sizes.total_periods();
    let coords: Vec<[f64; 2]> = (0..m_all)
        .map(|_| [uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)])
        .collect();
    let r2 = sizes.neighbour_radius * sizes.neighbour_radius;
    let mut edges = Vec::new();
    for i in 0..m_all {
        for j in i + 1..m_all {
            let d2 = (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
            if d2 <= r2 {
                edges.push((i, j));
            }
        }
    }
    let graph = SpatialGraph::from_undirected(m_all, sizes.n_sampled, &edges)?;
    let (lo, hi) = sizes.covariate_range;
    let raw: Vec<Vec<f64>> = (0..m_all * t_all)
        .map(|_| (0..n_covariates).map(|_| uniform(rng, lo, hi)).collect())
        .collect();
    let covariates = Covariates::from_raw(m_all, t_all, &raw)?;
    let (nlo, nhi) = sizes.total_range;
    let totals = (0..m_all * t_all).map(|_| rng.random_range(nlo..=nhi)).collect();
    Ok(Layout {
        coords,
        graph,
        covariates,
        totals,
    })
}

fn check_components(components: &[ComponentParams], n_effects: usize) -> Result<usize> {
    if components.len() != n_effects + 1 {
        return Err(Error::Config(format!(
            "{} components but {} sets of mixing effects",
            components.len(),
            n_effects
        )));
    }
    let dim = components[0].beta.len();
    if dim == 0 || components.iter().any(|c| c.beta.len() != dim || !(c.sigma2 > 0.0)) {
        return Err(Error::Config("component coefficients must share a dimension and have positive variance".into()));
    }
    Ok(dim)
}

/// Finish a truth from per-cell linear predictors: proportions, income
/// measures and multinomial counts.
fn complete<R: Rng + ?Sized>(
    rng: &mut R,
    sizes: &SimulationSizes,
    lay: Layout,
    components: Vec<ComponentParams>,
    predictor: impl Fn(usize, usize) -> Vec<f64>,
    effects: (Vec<Vec<f64>>, Vec<Vec<f64>>, Option<(Vec<usize>, Vec<Vec<f64>>)>),
) -> Result<SyntheticTruth> {
    let t_all = sizes.total_periods();
    let classes = IncomeClasses::uniform(DESIGN_BOUNDS.to_vec(), t_all)?;
    let quad = QuadConfig::default();
    let n_cells = sizes.n_areas * t_all;
    let mut proportions = Vec::with_capacity(n_cells);
    let mut average = Vec::with_capacity(n_cells);
    let mut median = Vec::with_capacity(n_cells);
    let mut gini = Vec::with_capacity(n_cells);
    let mut counts = Vec::with_capacity(n_cells);
    let scale2: Vec<f64> = components.iter().map(|c| c.sigma2).collect();
    for i in 0..sizes.n_areas {
        for t in 0..t_all {
            let pi = mixing_proportions(&predictor(i, t));
            let x = lay.covariates.row(i, t);
            let locs = components.iter().map(|c| c.location(x)).collect();
            let mix = crate::mixture::LogNormalMixture::new(pi.clone(), locs, scale2.clone())?;
            let ai = mix.mean();
            average.push(ai);
            median.push(mix.median(1e-12 * ai)?);
            gini.push(mix.gini(&quad)?);
            let bounds = classes.bounds(t);
            let probs: Vec<f64> = (0..bounds.len() - 1)
                .map(|g| mix.bin_probability(bounds[g], bounds[g + 1]))
                .collect();
            counts.push(sample_multinomial(rng, lay.totals[i * t_all + t], &probs)?);
            proportions.push(pi);
        }
    }
    let (spatial, temporal, blocks) = effects;
    Ok(SyntheticTruth {
        coords: lay.coords,
        graph: lay.graph,
        classes,
        covariates: lay.covariates,
        components,
        spatial,
        temporal,
        blocks,
        proportions,
        average,
        median,
        gini,
        totals: lay.totals,
        counts,
        n_sampled: sizes.n_sampled,
        n_periods: sizes.n_periods,
    })
}

/// Setting 1: `u_k ~ N(μ_k ι, τ_k⁻¹ Q_all(ρ_k)⁻¹)` over all areas and a
/// random walk from `η_0k` with variance `α_k` over all periods.
pub fn generate_setting1<R: Rng + ?Sized>(
    rng: &mut R,
    sizes: &SimulationSizes,
    params: &Setting1,
) -> Result<SyntheticTruth> {
    let n_eff = params.mu.len();
    if [params.rho.len(), params.tau.len(), params.alpha.len(), params.eta0.len()]
        .iter()
        .any(|&l| l != n_eff)
    {
        return Err(Error::Config("setting 1 effect parameters have mismatched lengths".into()));
    }
    let dim = check_components(&params.components, n_eff)?;
    let lay = layout(rng, sizes, dim - 1)?;
    let m_all = sizes.n_areas;
    let t_all = sizes.total_periods();
    let w = lay.graph.weights();
    let mut spatial = Vec::with_capacity(n_eff);
    let mut temporal = Vec::with_capacity(n_eff);
    for k in 0..n_eff {
        if !(0.0..1.0).contains(&params.rho[k]) || !(params.tau[k] > 0.0) || !(params.alpha[k] >= 0.0) {
            return Err(Error::Config(format!("invalid SAR/RW parameters for component {}", k + 2)));
        }
        // u = μι + A⁻ᵀ z / √τ with A = I - ρW has covariance τ⁻¹ (A Aᵀ)⁻¹
        let a_t = (DMatrix::identity(m_all, m_all) - &w * params.rho[k]).transpose();
        let z = DVector::from_fn(m_all, |_, _| standard_normal(rng));
        let v = a_t
            .lu()
            .solve(&z)
            .ok_or_else(|| Error::numerical("setting 1", "I - ρW is singular"))?;
        let scale = params.tau[k].sqrt().recip();
        spatial.push(v.iter().map(|x| params.mu[k] + scale * x).collect::<Vec<f64>>());
        let mut eta = Vec::with_capacity(t_all);
        let mut prev = params.eta0[k];
        for _ in 0..t_all {
            prev += params.alpha[k].sqrt() * standard_normal(rng);
            eta.push(prev);
        }
        temporal.push(eta);
    }
    let predictor = |i: usize, t: usize| (0..n_eff).map(|k| spatial[k][i] + temporal[k][t]).collect();
    let (s, tm) = (spatial.clone(), temporal.clone());
    complete(rng, sizes, lay, params.components.clone(), predictor, (s, tm, None))
}

/// Setting 2 spatial effects `3(d_1 - d_2)` and `3(d_2 - d_1)`.
pub fn setting2_spatial(coord: [f64; 2]) -> [f64; 2] {
    let v = 3.0 * (coord[0] - coord[1]);
    [v, -v]
}

/// Setting 2 temporal effects `t/3 - (T+1)/6` and `t/6 - T/12` for `t = 1..T`.
pub fn setting2_temporal(t: usize, n_periods: usize) -> [f64; 2] {
    let (t, n) = (t as f64, n_periods as f64);
    [t / 3.0 - (n + 1.0) / 6.0, t / 6.0 - n / 12.0]
}

/// Block of a point of `(-1, 1)²` on a `per_side × per_side` grid, row-major from the lower left.
pub fn block_of(coord: [f64; 2], per_side: usize) -> usize {
    let cell = |v: f64| (((v + 1.0) / 2.0 * per_side as f64).floor() as usize).min(per_side - 1);
    cell(coord[1]) * per_side + cell(coord[0])
}

/// Setting 2: predictors `μ_k + u_ik + η_tk + a_{h_i k}` with the printed
/// deterministic sequences and normal block effects. The sequences are
/// defined for two non-reference components.
pub fn generate_setting2<R: Rng + ?Sized>(
    rng: &mut R,
    sizes: &SimulationSizes,
    params: &Setting2,
) -> Result<SyntheticTruth> {
    if params.mu.len() != 2 {
        return Err(Error::Config("setting 2 is defined for three components".into()));
    }
    if params.blocks_per_side == 0 || !(params.block_sd >= 0.0) {
        return Err(Error::Config("setting 2 needs at least one block and a non-negative block sd".into()));
    }
    let dim = check_components(&params.components, 2)?;
    let lay = layout(rng, sizes, dim - 1)?;
    let t_all = sizes.total_periods();
    let n_blocks = params.blocks_per_side * params.blocks_per_side;
    let block_effects: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..n_blocks).map(|_| params.block_sd * standard_normal(rng)).collect())
        .collect();
    let area_block: Vec<usize> = lay.coords.iter().map(|&c| block_of(c, params.blocks_per_side)).collect();
    let spatial: Vec<Vec<f64>> = (0..2)
        .map(|k| lay.coords.iter().map(|&c| setting2_spatial(c)[k]).collect())
        .collect();
    let temporal: Vec<Vec<f64>> = (0..2)
        .map(|k| (1..=t_all).map(|t| setting2_temporal(t, t_all)[k]).collect())
        .collect();
    let predictor = |i: usize, t: usize| {
        (0..2)
            .map(|k| params.mu[k] + spatial[k][i] + temporal[k][t] + block_effects[k][area_block[i]])
            .collect()
    };
    let effects = (spatial.clone(), temporal.clone(), Some((area_block.clone(), block_effects.clone())));
    complete(rng, sizes, lay, params.components.clone(), predictor, effects)
}

/// Maximum-likelihood log-normal fit to one cell of grouped data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedFit {
    /// Mean of log income.
    pub mu: f64,
    /// Variance of log income.
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    /// False when the data cannot pin down both parameters: a single occupied
    /// class, or two adjacent occupied classes (a ridge along which the scale
    /// is free or tends to zero). The scale is then held at its starting value.
    pub identifiable: bool,
}

fn grouped_loglik(log_bounds: &[f64], counts: &[u32], mu: f64, s: f64) -> f64 {
    let sigma = s.exp();
    counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(g, &n)| n as f64 * ln_norm_interval((log_bounds[g] - mu) / sigma, (log_bounds[g + 1] - mu) / sigma))
        .sum()
}

/// Gradient in `(μ, ln σ)`.
fn grouped_gradient(log_bounds: &[f64], counts: &[u32], mu: f64, s: f64) -> [f64; 2] {
    let sigma = s.exp();
    let mut grad = [0.0, 0.0];
    for (g, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let a = (log_bounds[g] - mu) / sigma;
        let b = (log_bounds[g + 1] - mu) / sigma;
        let lp = ln_norm_interval(a, b);
        let dens = |z: f64| if z.is_finite() { (norm_pdf(z).ln() - lp).exp() } else { 0.0 };
        let (fa, fb) = (dens(a), dens(b));
        let za = if a.is_finite() { a * fa } else { 0.0 };
        let zb = if b.is_finite() { b * fb } else { 0.0 };
        grad[0] += n as f64 * (fa - fb) / sigma;
        grad[1] += n as f64 * (za - zb);
    }
    grad
}

/// Fit `ln Y ~ N(μ, σ²)` to class counts by damped Newton steps in `(μ, ln σ)`
/// with a finite-difference Hessian of the analytic gradient; a step is only
/// accepted when it raises the likelihood.
pub fn fit_grouped_ml_lognormal(bounds: &[f64], counts: &[u32]) -> Result<GroupedFit> {
    if bounds.len() != counts.len() + 1 || counts.is_empty() {
        return Err(Error::InvalidParameter("need one more boundary than class counts".into()));
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(Error::InvalidParameter("cell has no households".into()));
    }
    let log_bounds: Vec<f64> = bounds.iter().map(|z| z.ln()).collect();
    let occupied: Vec<usize> = (0..counts.len()).filter(|&g| counts[g] > 0).collect();
    let (mut mu, mut s) = {
        let mids: Vec<(f64, f64)> = occupied
            .iter()
            .map(|&g| (bin_midpoint(bounds[g], bounds[g + 1]).ln(), counts[g] as f64))
            .collect();
        let n = total as f64;
        let mean = mids.iter().map(|(v, w)| v * w).sum::<f64>() / n;
        let var = mids.iter().map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / n;
        (mean, 0.5 * var.max(0.01).ln())
    };
    if occupied.len() == 1 {
        return Ok(GroupedFit {
            mu,
            sigma2: (2.0 * s).exp(),
            log_likelihood: grouped_loglik(&log_bounds, counts, mu, s),
            converged: false,
            identifiable: false,
        });
    }
    let ridge = occupied.len() == 2 && occupied[1] == occupied[0] + 1;
    if ridge {
        // the scale is unidentified: profile over μ at the starting scale,
        // where the split point satisfies Φ((ln Z - μ)/σ) = share below
        let g = occupied[0];
        let below: u64 = counts[..=g].iter().map(|&c| c as u64).sum();
        let share = below as f64 / total as f64;
        let lz = log_bounds[g + 1];
        let outer_open = log_bounds[occupied[0]] == f64::NEG_INFINITY && log_bounds[occupied[1] + 1] == f64::INFINITY;
        if outer_open {
            mu = lz - s.exp() * norm_quantile(share);
        }
        let (mu_hat, ll, conv) = newton_1d(&log_bounds, counts, mu, s);
        return Ok(GroupedFit {
            mu: mu_hat,
            sigma2: (2.0 * s).exp(),
            log_likelihood: ll,
            converged: conv,
            identifiable: false,
        });
    }
    let mut ll = grouped_loglik(&log_bounds, counts, mu, s);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let g = grouped_gradient(&log_bounds, counts, mu, s);
        let scale = 1.0 + ll.abs();
        if g[0].abs().max(g[1].abs()) < 1e-9 * scale {
            converged = true;
            break;
        }
        let h = 1e-5;
        let gm = grouped_gradient(&log_bounds, counts, mu + h, s);
        let gmm = grouped_gradient(&log_bounds, counts, mu - h, s);
        let gs = grouped_gradient(&log_bounds, counts, mu, s + h);
        let gss = grouped_gradient(&log_bounds, counts, mu, s - h);
        let h00 = (gm[0] - gmm[0]) / (2.0 * h);
        let h11 = (gs[1] - gss[1]) / (2.0 * h);
        let h01 = 0.5 * ((gm[1] - gmm[1]) + (gs[0] - gss[0])) / (2.0 * h);
        let mut accepted = false;
        for _ in 0..40 {
            // solve (-H + λ D) δ = g with D the diagonal of -H (or 1)
            let d0 = (-h00).abs().max(1e-12);
            let d1 = (-h11).abs().max(1e-12);
            let a00 = -h00 + lambda * d0;
            let a11 = -h11 + lambda * d1;
            let a01 = -h01;
            let det = a00 * a11 - a01 * a01;
            if det > 0.0 && a00 > 0.0 {
                let dm = (a11 * g[0] - a01 * g[1]) / det;
                let ds = (a00 * g[1] - a01 * g[0]) / det;
                let (nm, ns) = (mu + dm, s + ds.clamp(-2.0, 2.0));
                let nll = grouped_loglik(&log_bounds, counts, nm, ns);
                if nll.is_finite() && nll >= ll {
                    let small = (dm.abs() + ds.abs()) < 1e-12 * (1.0 + mu.abs() + s.abs());
                    mu = nm;
                    s = ns;
                    ll = nll;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    if small {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged = converged || !accepted && grouped_gradient(&log_bounds, counts, mu, s).iter().all(|v| v.abs() < 1e-6 * scale);
            break;
        }
    }
    Ok(GroupedFit {
        mu,
        sigma2: (2.0 * s).exp(),
        log_likelihood: ll,
        converged,
        identifiable: true,
    })
}

/// Newton iterations in `μ` alone at fixed `ln σ`.
fn newton_1d(log_bounds: &[f64], counts: &[u32], mut mu: f64, s: f64) -> (f64, f64, bool) {
    let mut ll = grouped_loglik(log_bounds, counts, mu, s);
    for _ in 0..200 {
        let g = grouped_gradient(log_bounds, counts, mu, s)[0];
        if g.abs() < 1e-10 * (1.0 + ll.abs()) {
            return (mu, ll, true);
        }
        let h = 1e-5;
        let curv = (grouped_gradient(log_bounds, counts, mu + h, s)[0] - grouped_gradient(log_bounds, counts, mu - h, s)[0])
            / (2.0 * h);
        let mut step = if curv < 0.0 { -g / curv } else { g.signum() * 0.1 };
        let mut moved = false;
        for _ in 0..50 {
            let nll = grouped_loglik(log_bounds, counts, mu + step, s);
            if nll.is_finite() && nll >= ll {
                mu += step;
                ll = nll;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            return (mu, ll, false);
        }
    }
    (mu, ll, false)
}

/// Crude average income `N⁻¹ Σ_g N_g mid_g`, with `top_midpoint` standing in
/// for the open top class.
pub fn crude_average_income(bounds: &[f64], counts: &[u32], top_midpoint: f64) -> Result<f64> {
    if bounds.len() != counts.len() + 1 {
        return Err(Error::InvalidParameter("need one more boundary than class counts".into()));
    }
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    if total == 0.0 {
        return Err(Error::InvalidParameter("cell has no households".into()));
    }
    let sum: f64 = counts
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let mid = if bounds[g + 1].is_infinite() {
                top_midpoint
            } else {
                0.5 * (bounds[g] + bounds[g + 1])
            };
            n as f64 * mid
        })
        .sum();
    Ok(sum / total)
}

/// True average income and class counts of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTruth {
    pub area: usize,
    pub period: usize,
    pub average: f64,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub scope: Scope,
    pub ai_rmse: f64,
    pub ai_coverage: f64,
    pub n_cells: usize,
    /// Over every class of the cells with predictive counts; `None` when there are none.
    pub count_rmse: Option<f64>,
    pub count_coverage: Option<f64>,
    pub n_count_cells: usize,
}

/// RMSE of the posterior means and coverage of the intervals over the cells
/// of `scope`, for average income and, where summarised, class counts.
///
/// Rows are matched to the truth by `(area, period)` and accumulated in that
/// order, so the result does not depend on the row order of either input.
pub fn evaluate(truth: &[CellTruth], table: &SummaryTable, scope: Scope) -> Result<Metrics> {
    let lookup: std::collections::HashMap<(usize, usize), &CellTruth> =
        truth.iter().map(|c| ((c.area, c.period), c)).collect();
    let mut rows: Vec<_> = table.rows.iter().filter(|r| r.scope == scope).collect();
    rows.sort_by_key(|r| (r.area, r.period, r.quantity));
    let mut ai = (0.0, 0usize, 0usize);
    let mut bins = (0.0, 0usize, 0usize);
    let mut count_cells = std::collections::BTreeSet::new();
    for r in rows {
        let cell = lookup
            .get(&(r.area, r.period))
            .ok_or_else(|| Error::data(format!("area {} period {}", r.area, r.period), "no truth for summarised cell"))?;
        let value = match r.quantity {
            Quantity::AverageIncome => cell.average,
            Quantity::BinCount(g) => {
                let v = *cell.counts.get(g).ok_or_else(|| {
                    Error::data(format!("area {} period {}", r.area, r.period), format!("no class {g} in truth"))
                })?;
                count_cells.insert((r.area, r.period));
                v as f64
            }
            _ => continue,
        };
        let acc = if matches!(r.quantity, Quantity::AverageIncome) { &mut ai } else { &mut bins };
        acc.0 += (r.mean - value).powi(2);
        acc.1 += usize::from(r.lower <= value && value <= r.upper);
        acc.2 += 1;
    }
    if ai.2 == 0 {
        return Err(Error::InvalidParameter(format!("no average-income rows in scope {scope}")));
    }
    let (count_rmse, count_coverage) = if bins.2 > 0 {
        (Some((bins.0 / bins.2 as f64).sqrt()), Some(bins.1 as f64 / bins.2 as f64))
    } else {
        (None, None)
    };
    Ok(Metrics {
        scope,
        ai_rmse: (ai.0 / ai.2 as f64).sqrt(),
        ai_coverage: ai.1 as f64 / ai.2 as f64,
        n_cells: ai.2,
        count_rmse,
        count_coverage,
        n_count_cells: count_cells.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::SummaryRow;
    use crate::rng::RngStream;
    use crate::special::norm_cdf;

    fn tiny() -> SimulationSizes {
        SimulationSizes {
            n_areas: 30,
            n_sampled: 20,
            n_periods: 4,
            holdout_periods: 1,
            total_range: (100, 300),
            ..SimulationSizes::full()
        }
    }

    #[test]
    fn design_constants() {
        assert_eq!(DESIGN_BOUNDS, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, f64::INFINITY]);
        let c = design_components();
        assert!(c.iter().all(|c| c.sigma2 == 0.5));
        assert_eq!(c[0].beta, vec![0.5, 0.0, 1.0]);
        assert_eq!(c[2].beta, vec![2.0, -1.0, -1.0]);
    }

    #[test]
    fn setting1_is_consistent() {
        let truth = generate_setting1(&mut RngStream::new(1), &tiny(), &Setting1::default()).unwrap();
        assert_eq!(truth.total_periods(), 5);
        for c in 0..truth.counts.len() {
            assert_eq!(truth.counts[c].iter().sum::<u32>(), truth.totals[c]);
            assert!((100..=300).contains(&truth.totals[c]));
            let p = &truth.proportions[c];
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(truth.average[c] > truth.median[c] * 0.5 && truth.gini[c] > 0.0 && truth.gini[c] < 1.0);
        }
        for (i, j) in truth.graph.edges() {
            let d = truth.coords[i];
            let e = truth.coords[j];
            assert!(((d[0] - e[0]).powi(2) + (d[1] - e[1]).powi(2)).sqrt() <= 0.2);
        }
        let panel = truth.panel().unwrap();
        assert_eq!((panel.n_sampled(), panel.n_periods(), panel.covariates().n_periods()), (20, 4, 5));
        let again = generate_setting1(&mut RngStream::new(1), &tiny(), &Setting1::default()).unwrap();
        assert_eq!(truth.counts, again.counts);
    }

    #[test]
    fn setting1_effects_have_sar_scale() {
        // with no neighbours Q = I, so u_ik ~ N(μ_k, 1/τ_k)
        let sizes = SimulationSizes {
            n_areas: 2000,
            n_sampled: 2000,
            n_periods: 1,
            holdout_periods: 0,
            neighbour_radius: 0.0,
            total_range: (1, 1),
            ..SimulationSizes::full()
        };
        let truth = generate_setting1(&mut RngStream::new(3), &sizes, &Setting1::default()).unwrap();
        let u = &truth.spatial[0];
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let var = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean + 0.2).abs() < 4.0 * (10.0 / n).sqrt());
        assert!((var / 10.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn setting2_sequences() {
        let [a, b] = setting2_spatial([0.3, -0.4]);
        assert_eq!(b, -a);
        assert!((a - 2.1).abs() < 1e-12);
        assert_eq!(setting2_spatial([0.0, 0.0]), [0.0, -0.0]);
        for t_all in [1, 5, 21] {
            let s2: f64 = (1..=t_all).map(|t| setting2_temporal(t, t_all)[0]).sum();
            let s3: f64 = (1..=t_all).map(|t| setting2_temporal(t, t_all)[1]).sum();
            // arithmetic series: Σ t/3 = T(T+1)/6
            assert!(s2.abs() < 1e-12, "{s2}");
            assert!((s3 - (t_all as f64 * (t_all as f64 + 1.0) / 12.0 - t_all as f64 * t_all as f64 / 12.0)).abs() < 1e-12);
        }
        assert_eq!(block_of([-0.99, -0.99], 5), 0);
        assert_eq!(block_of([0.99, 0.99], 5), 24);
        assert_eq!(block_of([-0.5, 0.1], 5), 2 * 5 + 1);
    }

    #[test]
    fn setting2_is_consistent() {
        let truth = generate_setting2(&mut RngStream::new(2), &tiny(), &Setting2::default()).unwrap();
        let (blocks, effects) = truth.blocks.as_ref().unwrap();
        assert_eq!(effects[0].len(), 25);
        for i in 0..truth.n_areas() {
            assert_eq!(truth.spatial[1][i], -truth.spatial[0][i]);
            assert_eq!(blocks[i], block_of(truth.coords[i], 5));
            for t in 0..truth.total_periods() {
                let c = truth.cell(i, t);
                assert_eq!(truth.counts[c].iter().sum::<u32>(), truth.totals[c]);
                let lam2 = -0.2 + truth.spatial[0][i] + truth.temporal[0][t] + effects[0][blocks[i]];
                let lam3 = 0.1 + truth.spatial[1][i] + truth.temporal[1][t] + effects[1][blocks[i]];
                let expect = mixing_proportions(&[lam2, lam3]);
                for k in 0..3 {
                    assert!((truth.proportions[c][k] - expect[k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn grouped_ml_recovers_lognormal() {
        let mut rng = RngStream::new(4);
        let (mu, s2): (f64, f64) = (1.0, 0.5);
        let probs: Vec<f64> = (0..9)
            .map(|g| {
                let lo = if g == 0 { f64::NEG_INFINITY } else { (DESIGN_BOUNDS[g].ln() - mu) / s2.sqrt() };
                let hi = (DESIGN_BOUNDS[g + 1].ln() - mu) / s2.sqrt();
                norm_cdf(hi) - norm_cdf(lo)
            })
            .collect();
        let counts = sample_multinomial(&mut rng, 100_000, &probs).unwrap();
        let fit = fit_grouped_ml_lognormal(&DESIGN_BOUNDS, &counts).unwrap();
        assert!(fit.converged && fit.identifiable);
        assert!((fit.mu - mu).abs() < 0.02, "{}", fit.mu);
        assert!((fit.sigma2 - s2).abs() < 0.02, "{}", fit.sigma2);
        let g = grouped_gradient(&DESIGN_BOUNDS.map(f64::ln), &counts, fit.mu, 0.5 * fit.sigma2.ln());
        assert!(g[0].abs() < 1e-3 && g[1].abs() < 1e-3);
    }

    #[test]
    fn grouped_ml_on_exact_expected_counts() {
        // counts proportional to exact probabilities: the maximiser is the truth
        let (mu, sigma) = (0.7f64, 0.6f64);
        let probs: Vec<f64> = (0..9)
            .map(|g| {
                let lo = if g == 0 { f64::NEG_INFINITY } else { (DESIGN_BOUNDS[g].ln() - mu) / sigma };
                norm_cdf((DESIGN_BOUNDS[g + 1].ln() - mu) / sigma) - norm_cdf(lo)
            })
            .collect();
        let counts: Vec<u32> = probs.iter().map(|p| (p * 1e9).round() as u32).collect();
        let fit = fit_grouped_ml_lognormal(&DESIGN_BOUNDS, &counts).unwrap();
        assert!((fit.mu - mu).abs() < 1e-4);
        assert!((fit.sigma2.sqrt() - sigma).abs() < 1e-4);
    }

    #[test]
    fn two_class_split_at_median_is_a_ridge() {
        let bounds = [0.0, 3.0, f64::INFINITY];
        let fit = fit_grouped_ml_lognormal(&bounds, &[500, 500]).unwrap();
        assert!(!fit.identifiable);
        assert!((fit.mu - 3f64.ln()).abs() < 1e-8, "{}", fit.mu);
        let single = fit_grouped_ml_lognormal(&DESIGN_BOUNDS, &[0, 0, 0, 0, 0, 0, 0, 0, 40]).unwrap();
        assert!(!single.identifiable && !single.converged);
        assert!(fit_grouped_ml_lognormal(&bounds, &[0, 0]).is_err());
    }

    #[test]
    fn crude_estimator_uses_top_midpoint() {
        let v = crude_average_income(&DESIGN_BOUNDS, &[1, 0, 0, 0, 0, 0, 0, 0, 1], 20.0).unwrap();
        assert!((v - 10.25).abs() < 1e-12);
        assert!(crude_average_income(&DESIGN_BOUNDS, &[0; 9], 20.0).is_err());
    }

    fn row(area: usize, period: usize, quantity: Quantity, mean: f64, lower: f64, upper: f64) -> SummaryRow {
        SummaryRow {
            area,
            period,
            scope: Scope::InSample,
            quantity,
            mean,
            sd: 0.0,
            lower,
            upper,
        }
    }

    fn truth2() -> Vec<CellTruth> {
        vec![
            CellTruth {
                area: 0,
                period: 0,
                average: 3.0,
                counts: vec![4, 6],
            },
            CellTruth {
                area: 1,
                period: 0,
                average: 5.0,
                counts: vec![1, 9],
            },
        ]
    }

    #[test]
    fn evaluate_hand_computed_two_cells() {
        let table = SummaryTable {
            level: 0.95,
            rows: vec![
                row(0, 0, Quantity::AverageIncome, 3.5, 3.0, 4.0),
                row(1, 0, Quantity::AverageIncome, 4.0, 3.5, 4.5),
                row(0, 0, Quantity::BinCount(0), 5.0, 3.0, 6.0),
                row(0, 0, Quantity::BinCount(1), 5.0, 3.0, 5.5),
            ],
        };
        let m = evaluate(&truth2(), &table, Scope::InSample).unwrap();
        // sqrt((0.25 + 1) / 2)
        assert!((m.ai_rmse - 0.625f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.ai_coverage, 0.5);
        assert!((m.count_rmse.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m.count_coverage, Some(0.5));
        assert_eq!(m.n_count_cells, 1);
        assert!(evaluate(&truth2(), &table, Scope::Spatial).is_err());
    }

    #[test]
    fn evaluate_offset_and_order() {
        let c = 0.3;
        let rows = vec![
            row(0, 0, Quantity::AverageIncome, 3.0 + c, 3.0, 3.0 + 2.0 * c),
            row(1, 0, Quantity::AverageIncome, 5.0 + c, 5.0, 5.0 + 2.0 * c),
        ];
        let mut table = SummaryTable { level: 0.95, rows };
        let m = evaluate(&truth2(), &table, Scope::InSample).unwrap();
        assert!((m.ai_rmse - c).abs() < 1e-12);
        assert_eq!(m.ai_coverage, 1.0);
        table.rows.reverse();
        let mut t = truth2();
        t.reverse();
        assert_eq!(evaluate(&t, &table, Scope::InSample).unwrap(), m);
        let perfect = SummaryTable {
            level: 0.95,
            rows: vec![row(0, 0, Quantity::AverageIncome, 3.0, 3.0, 3.0)],
        };
        let p = evaluate(&truth2(), &perfect, Scope::InSample).unwrap();
        assert_eq!((p.ai_rmse, p.ai_coverage), (0.0, 1.0));
    }
}
