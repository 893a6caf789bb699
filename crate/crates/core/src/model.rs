//! Domain types: grouped panels, spatial graphs, configuration and parameter states.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{mixing_proportions, LogNormalMixture};

/// Income class boundaries `Z_t0 < Z_t1 < … < Z_tG` for every period.
///
/// Periods beyond the last defined one reuse the last set of boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomeClasses {
    bounds: Vec<Vec<f64>>,
}

impl IncomeClasses {
    pub fn new(bounds: Vec<Vec<f64>>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::data("classes", "no periods defined"));
        }
        for (t, b) in bounds.iter().enumerate() {
            let loc = format!("classes period {t}");
            if b.len() < 3 {
                return Err(Error::data(loc, "at least two income classes are required"));
            }
            if !(b[0] >= 0.0) {
                return Err(Error::data(loc, "boundaries must be non-negative"));
            }
            for g in 1..b.len() {
                if b[g - 1].is_infinite() || !(b[g] > b[g - 1]) {
                    return Err(Error::data(
                        format!("{loc}, bin {g}"),
                        "boundaries must be strictly increasing with only the last one infinite",
                    ));
                }
            }
        }
        Ok(IncomeClasses { bounds })
    }

    /// Same boundaries for `n_periods` periods.
    pub fn uniform(bounds: Vec<f64>, n_periods: usize) -> Result<Self> {
        IncomeClasses::new(vec![bounds; n_periods.max(1)])
    }

    pub fn n_periods(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self, t: usize) -> &[f64] {
        &self.bounds[t.min(self.bounds.len() - 1)]
    }

    pub fn n_bins(&self, t: usize) -> usize {
        self.bounds(t).len() - 1
    }

    /// Boundaries on the log scale; a zero lower boundary maps to `-inf`.
    pub fn log_bounds(&self, t: usize) -> Vec<f64> {
        self.bounds(t).iter().map(|z| z.ln()).collect()
    }
}

/// Covariate vectors `x_it = (1, x_it1, …, x_itp)` for all areas and periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    n_areas: usize,
    n_periods: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Covariates {
    /// `values` is laid out area-major: `values[(i * n_periods + t) * dim + j]`.
    pub fn new(n_areas: usize, n_periods: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::data("covariates", "dimension must include the intercept"));
        }
        if values.len() != n_areas * n_periods * dim {
            return Err(Error::data(
                "covariates",
                format!("expected {} values, got {}", n_areas * n_periods * dim, values.len()),
            ));
        }
        for (idx, row) in values.chunks(dim).enumerate() {
            let (i, t) = (idx / n_periods, idx % n_periods);
            if row[0] != 1.0 {
                return Err(Error::data(format!("covariates area {i} period {t}"), "leading entry must be 1"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("covariates area {i} period {t}"), "non-finite value"));
            }
        }
        Ok(Covariates { n_areas, n_periods, dim, values })
    }

    /// Build from rows without the leading intercept.
    pub fn from_raw(n_areas: usize, n_periods: usize, raw: &[Vec<f64>]) -> Result<Self> {
        let p = raw.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(raw.len() * (p + 1));
        for row in raw {
            if row.len() != p {
                return Err(Error::data("covariates", "ragged covariate rows"));
            }
            values.push(1.0);
            values.extend_from_slice(row);
        }
        Covariates::new(n_areas, n_periods, p + 1, values)
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.n_periods + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    fn period(&self, t: usize) -> Covariates {
        let mut values = Vec::with_capacity(self.n_areas * self.dim);
        for i in 0..self.n_areas {
            values.extend_from_slice(self.row(i, t));
        }
        Covariates {
            n_areas: self.n_areas,
            n_periods: 1,
            dim: self.dim,
            values,
        }
    }
}

/// Observed grouped counts `N_itg` for the first `m` (sampled) areas over `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPanel {
    n_areas: usize,
    n_sampled: usize,
    n_periods: usize,
    classes: IncomeClasses,
    covariates: Covariates,
    // indexed i * n_periods + t for i < n_sampled; None marks an unobserved cell
    counts: Vec<Option<Vec<u32>>>,
}

impl GroupedPanel {
    pub fn new(
        n_sampled: usize,
        n_periods: usize,
        classes: IncomeClasses,
        covariates: Covariates,
        counts: Vec<Option<Vec<u32>>>,
    ) -> Result<Self> {
        let n_areas = covariates.n_areas();
        if n_sampled == 0 || n_sampled > n_areas {
            return Err(Error::data("panel", format!("{n_sampled} sampled areas out of {n_areas}")));
        }
        if n_periods == 0 {
            return Err(Error::data("panel", "no periods"));
        }
        if covariates.n_periods() < n_periods {
            return Err(Error::data(
                "covariates",
                format!("covariates cover {} periods, fitting needs {n_periods}", covariates.n_periods()),
            ));
        }
        if counts.len() != n_sampled * n_periods {
            return Err(Error::data("counts", "cell table does not match sampled areas x periods"));
        }
        for (idx, cell) in counts.iter().enumerate() {
            if let Some(c) = cell {
                let t = idx % n_periods;
                if c.len() != classes.n_bins(t) {
                    return Err(Error::data(
                        format!("counts area {} period {t}", idx / n_periods),
                        format!("{} bins given, classes define {}", c.len(), classes.n_bins(t)),
                    ));
                }
            }
        }
        if counts.iter().all(Option::is_none) {
            return Err(Error::data("counts", "no observations"));
        }
        Ok(GroupedPanel {
            n_areas,
            n_sampled,
            n_periods,
            classes,
            covariates,
            counts,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn n_sampled(&self) -> usize {
        self.n_sampled
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn classes(&self) -> &IncomeClasses {
        &self.classes
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        self.covariates.row(i, t)
    }

    /// Counts of cell `(i, t)`, `None` when unobserved or `i` is not sampled.
    pub fn counts(&self, i: usize, t: usize) -> Option<&[u32]> {
        if i >= self.n_sampled || t >= self.n_periods {
            return None;
        }
        self.counts[i * self.n_periods + t].as_deref()
    }

    /// `N_it`, zero for unobserved cells.
    pub fn total(&self, i: usize, t: usize) -> u32 {
        self.counts(i, t).map_or(0, |c| c.iter().sum())
    }

    /// Cells with at least one household.
    pub fn observed_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_sampled)
            .flat_map(move |i| (0..self.n_periods).map(move |t| (i, t)))
            .filter(move |&(i, t)| self.total(i, t) > 0)
    }

    /// Single-period panel for period `t`.
    pub fn period_slice(&self, t: usize) -> Result<GroupedPanel> {
        if t >= self.n_periods {
            return Err(Error::InvalidParameter(format!("period {t} out of range")));
        }
        let counts = (0..self.n_sampled)
            .map(|i| self.counts[i * self.n_periods + t].clone())
            .collect();
        GroupedPanel::new(
            self.n_sampled,
            1,
            IncomeClasses::new(vec![self.classes.bounds(t).to_vec()])?,
            self.covariates.period(t),
            counts,
        )
    }
}

/// Neighbour structure over all areas with the sampled block first.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    n_sampled: usize,
    neighbors: Vec<Vec<usize>>,
}

impl SpatialGraph {
    /// Neighbour lists must be symmetric and free of self-loops.
    pub fn new(n_sampled: usize, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        if n_sampled == 0 || n_sampled > n {
            return Err(Error::data("graph", format!("{n_sampled} sampled areas out of {n}")));
        }
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&j) = list.iter().find(|&&j| j >= n) {
                return Err(Error::data(format!("edge ({i}, {j})"), "unknown area id"));
            }
            if list.contains(&i) {
                return Err(Error::data(format!("edge ({i}, {i})"), "self-loop"));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::data(format!("edge ({i}, {j})"), "asymmetric adjacency"));
                }
            }
        }
        Ok(SpatialGraph { n_sampled, neighbors })
    }

    /// Directed edge list; every edge must appear in both directions.
    pub fn from_edges(n_areas: usize, n_sampled: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n_areas];
        for &(i, j) in edges {
            if i >= n_areas || j >= n_areas {
                return Err(Error::data(format!("edge ({i}, {j})"), "unknown area id"));
            }
            neighbors[i].push(j);
        }
        SpatialGraph::new(n_sampled, neighbors)
    }

    /// Undirected edge list.
    pub fn from_undirected(n_areas: usize, n_sampled: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let both: Vec<_> = edges.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        SpatialGraph::from_edges(n_areas, n_sampled, &both)
    }

    pub fn n_areas(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_sampled(&self) -> usize {
        self.n_sampled
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Row-standardised adjacency `W`; isolated areas get a zero row.
    pub fn weights(&self) -> DMatrix<f64> {
        let n = self.n_areas();
        let mut w = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let v = 1.0 / list.len() as f64;
            for &j in list {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// Directed edges in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
            .collect()
    }
}

/// Which random-effect structure drives the mixing proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// SAR spatial effects and random-walk temporal effects.
    #[default]
    SarRw,
    /// Independent normal area and period effects.
    TwoWay,
    /// SAR spatial effects only, fitted separately for each period.
    SpatialOnly,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sar-rw" | "proposed" => Ok(Variant::SarRw),
            "two-way" => Ok(Variant::TwoWay),
            "spatial-only" | "spatial" => Ok(Variant::SpatialOnly),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub c_beta: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub c_mu: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub c_eta: f64,
    pub a_alpha: f64,
    pub b_alpha: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            c_beta: 100.0,
            a_sigma: 0.1,
            b_sigma: 0.1,
            c_mu: 10.0,
            a_tau: 1.0,
            b_tau: 1.0,
            c_eta: 10.0,
            a_alpha: 3.0,
            b_alpha: 1.0,
        }
    }
}

impl Priors {
    fn validate(&self) -> Result<()> {
        let all = [
            ("c_beta", self.c_beta),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("c_mu", self.c_mu),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("c_eta", self.c_eta),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
        ];
        for (name, v) in all {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Prior mean of the random-walk variance, or its scale when the mean is undefined.
    pub fn alpha_initial(&self) -> f64 {
        if self.a_alpha > 1.0 {
            self.b_alpha / (self.a_alpha - 1.0)
        } else {
            self.b_alpha
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcControls {
    /// Stored-phase sweeps after burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcControls {
    fn default() -> Self {
        McmcControls {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_components: usize,
    pub priors: Priors,
    pub variant: Variant,
    /// Number of equally spaced points `j / (R + 1)` on (0, 1).
    pub rho_grid_points: usize,
    /// Largest PG shape drawn exactly; larger shapes use a moment-matched normal.
    pub pg_exact_max: u32,
    pub mcmc: McmcControls,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_components: 3,
            priors: Priors::default(),
            variant: Variant::SarRw,
            rho_grid_points: 99,
            pg_exact_max: 50,
            mcmc: McmcControls::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::Config("at least one component is required".into()));
        }
        if self.rho_grid_points == 0 {
            return Err(Error::Config("rho grid needs at least one point".into()));
        }
        if self.mcmc.thin == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        self.priors.validate()
    }

    pub fn rho_grid(&self) -> Vec<f64> {
        let r = self.rho_grid_points;
        (1..=r).map(|j| j as f64 / (r + 1) as f64).collect()
    }
}

/// Coefficients and scale of one log-normal component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl ComponentParams {
    pub fn location(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, x)| b * x).sum()
    }
}

/// Mixing-proportion effects of one non-reference component.
///
/// `u` is stored in centred form, so it already carries `mu`; the linear
/// predictor of area `i` in period `t` is `u[i] + eta[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingEffects {
    pub mu: f64,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta0: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Spatial correlation; 0 when the variant uses independent spatial effects.
    pub rho: f64,
    /// Position of `rho` on the sampling grid.
    pub rho_index: usize,
}

impl MixingEffects {
    pub fn zeros(n_sampled: usize, n_periods: usize) -> Self {
        MixingEffects {
            mu: 0.0,
            u: vec![0.0; n_sampled],
            eta: vec![0.0; n_periods],
            eta0: 0.0,
            tau: 1.0,
            alpha: 1.0,
            rho: 0.5,
            rho_index: 0,
        }
    }
}

/// One full parameter configuration. Component 0 is the reference whose
/// mixing effects are identically zero, so `effects[k - 1]` belongs to component `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub components: Vec<ComponentParams>,
    pub effects: Vec<MixingEffects>,
}

impl ParamState {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_sampled(&self) -> usize {
        self.effects.first().map_or(0, |e| e.u.len())
    }

    pub fn n_periods(&self) -> usize {
        self.effects.first().map_or(0, |e| e.eta.len())
    }

    /// Linear predictors of components `1..K` for a sampled cell.
    pub fn predictors(&self, i: usize, t: usize) -> Vec<f64> {
        self.effects.iter().map(|e| e.u[i] + e.eta[t]).collect()
    }

    pub fn mixing_proportions(&self, i: usize, t: usize) -> Vec<f64> {
        mixing_proportions(&self.predictors(i, t))
    }

    /// Mixture for a cell with covariates `x` and proportions `weights`.
    pub fn mixture(&self, x: &[f64], weights: &[f64]) -> Result<LogNormalMixture> {
        let locs: Vec<f64> = self.components.iter().map(|c| c.location(x)).collect();
        let scale2: Vec<f64> = self.components.iter().map(|c| c.sigma2).collect();
        LogNormalMixture::new(weights.to_vec(), locs, scale2)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.components.iter().enumerate() {
            if !(c.sigma2 > 0.0) || !c.sigma2.is_finite() || c.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidParameter(format!("component {} has invalid parameters", k + 1)));
            }
        }
        for (k, e) in self.effects.iter().enumerate() {
            let ok = e.tau > 0.0
                && e.alpha > 0.0
                && e.rho >= 0.0
                && e.rho < 1.0
                && e.tau.is_finite()
                && e.alpha.is_finite()
                && e.mu.is_finite()
                && e.eta0.is_finite()
                && e.u.iter().chain(&e.eta).all(|v| v.is_finite());
            if !ok {
                return Err(Error::InvalidParameter(format!("mixing effects of component {} invalid", k + 2)));
            }
        }
        Ok(())
    }
}

/// Stored MCMC output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub config: ModelConfig,
    pub seed: u64,
    /// Period fitted by this chain when the variant fits periods separately.
    pub period: Option<usize>,
    pub states: Vec<ParamState>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_reject_bad_boundaries() {
        assert!(IncomeClasses::new(vec![vec![0.0, 1.0]]).is_err());
        assert!(IncomeClasses::new(vec![vec![0.0, 2.0, 1.0]]).is_err());
        assert!(IncomeClasses::new(vec![vec![0.0, f64::INFINITY, 5.0]]).is_err());
        assert!(IncomeClasses::new(vec![vec![-1.0, 1.0, 2.0]]).is_err());
        let c = IncomeClasses::new(vec![vec![0.0, 1.0, f64::INFINITY]]).unwrap();
        assert_eq!(c.n_bins(7), 2);
        assert_eq!(c.log_bounds(0)[0], f64::NEG_INFINITY);
    }

    #[test]
    fn graph_rows_standardised() {
        let g = SpatialGraph::from_undirected(4, 4, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let w = g.weights();
        for i in 0..3 {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(w.row(3).sum(), 0.0);
    }

    #[test]
    fn graph_validation() {
        assert!(SpatialGraph::from_edges(2, 2, &[(0, 0)]).is_err());
        assert!(SpatialGraph::from_edges(2, 2, &[(0, 1)]).is_err());
        assert!(SpatialGraph::from_edges(2, 2, &[(0, 2), (2, 0)]).is_err());
        assert!(SpatialGraph::from_edges(2, 2, &[(0, 1), (1, 0)]).is_ok());
    }

    #[test]
    fn config_defaults() {
        let c = ModelConfig::default();
        assert_eq!(c.priors.c_beta, 100.0);
        assert_eq!(c.priors.a_sigma, 0.1);
        assert_eq!(c.priors.a_alpha, 3.0);
        let grid = c.rho_grid();
        assert_eq!(grid.len(), 99);
        assert!((grid[0] - 0.01).abs() < 1e-15 && (grid[98] - 0.99).abs() < 1e-15);
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.priors.c_mu = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn panel_requires_observations() {
        let classes = IncomeClasses::uniform(vec![0.0, 1.0, f64::INFINITY], 1).unwrap();
        let cov = Covariates::from_raw(1, 1, &[vec![]]).unwrap();
        assert!(GroupedPanel::new(1, 1, classes.clone(), cov.clone(), vec![None]).is_err());
        let p = GroupedPanel::new(1, 1, classes, cov, vec![Some(vec![3, 4])]).unwrap();
        assert_eq!(p.total(0, 0), 7);
    }
}
