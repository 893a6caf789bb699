//! Chain initialisation, burn-in and storage, and the variant-level fit.

use super::conditionals::{temporal_sum_of_squares, TemporalPrior};
use super::grid::RhoGrid;
use super::sweep::{gibbs_sweep, SweepWorkspace};
use crate::error::{Error, Result};
use crate::mixture::grouped_log_likelihood;
use crate::model::{
    ComponentParams, GroupedPanel, MixingEffects, ModelConfig, ParamState, PosteriorDraws, SpatialGraph, Variant,
};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Grid used by `config.variant`: the SAR grid, or the identity structure
/// for independent spatial effects.
pub fn grid_for(graph: &SpatialGraph, config: &ModelConfig) -> Result<RhoGrid> {
    match config.variant {
        Variant::TwoWay => RhoGrid::identity(graph.n_areas(), graph.n_sampled()),
        _ => RhoGrid::new(graph, &config.rho_grid()),
    }
}

/// Weighted quantiles of the pooled log bin midpoints spread the component
/// intercepts; slopes start at zero, scales at 0.5, effects at zero.
pub fn initial_state(panel: &GroupedPanel, grid: &RhoGrid, config: &ModelConfig) -> ParamState {
    let k_total = config.n_components;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for (i, t) in panel.observed_cells() {
        let bounds = panel.classes().bounds(t);
        for (g, &n) in panel.counts(i, t).unwrap_or(&[]).iter().enumerate() {
            if n > 0 {
                pooled.push((bin_midpoint(bounds[g], bounds[g + 1]).ln(), n as f64));
            }
        }
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pooled.iter().map(|p| p.1).sum();
    let quantile = |q: f64| {
        let mut acc = 0.0;
        for &(v, w) in &pooled {
            acc += w;
            if acc >= q * total {
                return v;
            }
        }
        pooled.last().map_or(0.0, |p| p.0)
    };
    let p = panel.dim();
    let components = (0..k_total)
        .map(|k| {
            let mut beta = vec![0.0; p];
            beta[0] = quantile((k as f64 + 0.5) / k_total as f64);
            ComponentParams { beta, sigma2: 0.5 }
        })
        .collect();
    let (rho_index, rho) = match config.variant {
        Variant::TwoWay => (0, 0.0),
        _ => {
            let j = grid.nearest_index(0.5);
            (j, grid.point(j))
        }
    };
    let effects = (1..k_total)
        .map(|_| MixingEffects {
            alpha: config.priors.alpha_initial(),
            rho,
            rho_index,
            ..MixingEffects::zeros(panel.n_sampled(), panel.n_periods())
        })
        .collect();
    ParamState { components, effects }
}

/// Representative income of a class: the midpoint, or 4/3 of the lower
/// bound for an open top class.
pub fn bin_midpoint(lo: f64, hi: f64) -> f64 {
    if hi.is_infinite() {
        if lo > 0.0 {
            lo * 4.0 / 3.0
        } else {
            1.0
        }
    } else {
        0.5 * (lo + hi)
    }
}

/// Run one chain from the default initial state.
pub fn run_chain_with(
    panel: &GroupedPanel,
    grid: &RhoGrid,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<Vec<ParamState>> {
    config.validate()?;
    if grid.n_sampled() != panel.n_sampled() {
        return Err(Error::Config(format!(
            "graph has {} sampled areas, panel has {}",
            grid.n_sampled(),
            panel.n_sampled()
        )));
    }
    let mut state = initial_state(panel, grid, config);
    let mut ws = SweepWorkspace::new(panel, config.n_components);
    let mc = &config.mcmc;
    let mut stored = Vec::with_capacity(mc.iterations / mc.thin);
    for sweep in 0..mc.burn_in + mc.iterations {
        gibbs_sweep(rng, panel, grid, config, &mut state, &mut ws)
            .map_err(|e| e.within(&format!("sweep {}", sweep + 1)))?;
        if sweep >= mc.burn_in && (sweep - mc.burn_in + 1) % mc.thin == 0 {
            stored.push(state.clone());
        }
    }
    Ok(stored)
}

/// Fit `config.variant` to the panel. Joint variants return one chain;
/// the spatial-only variant returns one independent chain per period.
pub fn fit(panel: &GroupedPanel, graph: &SpatialGraph, config: &ModelConfig) -> Result<Vec<PosteriorDraws>> {
    config.validate()?;
    if graph.n_areas() != panel.n_areas() {
        return Err(Error::Config(format!(
            "graph has {} areas, covariates cover {}",
            graph.n_areas(),
            panel.n_areas()
        )));
    }
    let grid = grid_for(graph, config)?;
    let seed = config.mcmc.seed;
    match config.variant {
        Variant::SpatialOnly => (0..panel.n_periods())
            .map(|t| {
                let slice = panel.period_slice(t)?;
                let mut rng = RngStream::new(seed).split(t as u64);
                let states = run_chain_with(&slice, &grid, config, &mut rng)
                    .map_err(|e| e.within(&format!("period {t}")))?;
                Ok(PosteriorDraws {
                    config: config.clone(),
                    seed,
                    period: Some(t),
                    states,
                })
            })
            .collect(),
        _ => {
            let mut rng = RngStream::new(seed);
            let states = run_chain_with(panel, &grid, config, &mut rng)?;
            Ok(vec![PosteriorDraws {
                config: config.clone(),
                seed,
                period: None,
                states,
            }])
        }
    }
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

fn ln_inverse_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Grouped log-likelihood plus log prior density, up to the constant of the
/// uniform prior on the spatial correlation.
pub fn log_posterior(panel: &GroupedPanel, grid: &RhoGrid, config: &ModelConfig, state: &ParamState) -> Result<f64> {
    let pr = &config.priors;
    let ll = grouped_log_likelihood(panel, state)?;
    let mut lp = ll.value;
    for c in &state.components {
        lp += c.beta.iter().map(|b| ln_normal(*b, 0.0, pr.c_beta)).sum::<f64>();
        lp += ln_inverse_gamma(c.sigma2, pr.a_sigma, pr.b_sigma);
    }
    let temporal = TemporalPrior::of(config.variant);
    for e in &state.effects {
        let m = e.u.len() as f64;
        let v: Vec<f64> = e.u.iter().map(|u| u - e.mu).collect();
        let j = e.rho_index;
        lp += ln_normal(e.mu, 0.0, pr.c_mu);
        lp += 0.5 * (m * e.tau.ln() + grid.log_det(j)) - 0.5 * m * LN_2PI - 0.5 * e.tau * grid.quad_form(j, &v);
        lp += ln_gamma_density(e.tau, pr.a_tau, pr.b_tau);
        if temporal != TemporalPrior::Absent {
            let n = e.eta.len() as f64;
            lp += -0.5 * n * (LN_2PI + e.alpha.ln()) - 0.5 * temporal_sum_of_squares(e, temporal) / e.alpha;
            lp += ln_inverse_gamma(e.alpha, pr.a_alpha, pr.b_alpha);
        }
        if temporal == TemporalPrior::RandomWalk {
            lp += ln_normal(e.eta0, 0.0, pr.c_eta);
        }
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Covariates, IncomeClasses, McmcControls};

    fn tiny() -> (GroupedPanel, SpatialGraph) {
        let classes = IncomeClasses::uniform(vec![0.0, 1.0, 3.0, f64::INFINITY], 2).unwrap();
        let cov = Covariates::new(3, 2, 1, vec![1.0; 6]).unwrap();
        let counts = vec![
            Some(vec![5, 8, 2]),
            Some(vec![3, 9, 4]),
            Some(vec![6, 6, 1]),
            None,
        ];
        let panel = GroupedPanel::new(2, 2, classes, cov, counts).unwrap();
        let graph = SpatialGraph::from_undirected(3, 2, &[(0, 1), (1, 2)]).unwrap();
        (panel, graph)
    }

    fn config(iterations: usize, burn_in: usize, thin: usize) -> ModelConfig {
        ModelConfig {
            n_components: 2,
            rho_grid_points: 9,
            mcmc: McmcControls {
                iterations,
                burn_in,
                thin,
                seed: 11,
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn midpoints() {
        assert_eq!(bin_midpoint(0.0, 1.0), 0.5);
        assert_eq!(bin_midpoint(15.0, f64::INFINITY), 20.0);
        assert_eq!(bin_midpoint(0.0, f64::INFINITY), 1.0);
    }

    #[test]
    fn initial_state_is_valid_and_ordered() {
        let (panel, graph) = tiny();
        let cfg = ModelConfig { n_components: 3, ..config(0, 0, 1) };
        let grid = grid_for(&graph, &cfg).unwrap();
        let st = initial_state(&panel, &grid, &cfg);
        st.validate().unwrap();
        assert!(st.components[0].beta[0] <= st.components[1].beta[0]);
        assert!(st.components[1].beta[0] <= st.components[2].beta[0]);
        assert_eq!(st.effects[0].rho, 0.5);
        assert_eq!(st.effects[0].alpha, 0.5);
    }

    #[test]
    fn empty_and_thinned_chains() {
        let (panel, graph) = tiny();
        let draws = fit(&panel, &graph, &config(0, 3, 1)).unwrap();
        assert_eq!(draws.len(), 1);
        assert!(draws[0].is_empty());
        assert_eq!(draws[0].seed, 11);
        let draws = fit(&panel, &graph, &config(10, 2, 3)).unwrap();
        assert_eq!(draws[0].len(), 3);
    }

    #[test]
    fn thinning_keeps_every_nth_state() {
        let (panel, graph) = tiny();
        let all = fit(&panel, &graph, &config(9, 2, 1)).unwrap().remove(0);
        let thinned = fit(&panel, &graph, &config(9, 2, 3)).unwrap().remove(0);
        assert_eq!(thinned.states, vec![all.states[2].clone(), all.states[5].clone(), all.states[8].clone()]);
    }

    #[test]
    fn deterministic_given_seed() {
        let (panel, graph) = tiny();
        let a = fit(&panel, &graph, &config(20, 5, 1)).unwrap();
        let b = fit(&panel, &graph, &config(20, 5, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variants_run_and_stay_valid() {
        let (panel, graph) = tiny();
        for variant in [Variant::SarRw, Variant::TwoWay, Variant::SpatialOnly] {
            let cfg = ModelConfig { variant, ..config(30, 10, 1) };
            let draws = fit(&panel, &graph, &cfg).unwrap();
            let expected = if variant == Variant::SpatialOnly { 2 } else { 1 };
            assert_eq!(draws.len(), expected);
            let grid = grid_for(&graph, &cfg).unwrap();
            for d in &draws {
                let p = match d.period {
                    Some(t) => panel.period_slice(t).unwrap(),
                    None => panel.clone(),
                };
                for s in &d.states {
                    s.validate().unwrap();
                    assert!(log_posterior(&p, &grid, &cfg, s).unwrap().is_finite());
                }
            }
            if variant == Variant::TwoWay {
                assert!(draws[0].states.iter().all(|s| s.effects[0].rho == 0.0));
            }
            if variant == Variant::SpatialOnly {
                assert!(draws[0].states.iter().all(|s| s.effects[0].eta == vec![0.0]));
            }
        }
    }

    #[test]
    fn single_component_only_updates_components() {
        let (panel, graph) = tiny();
        let cfg = ModelConfig { n_components: 1, ..config(5, 0, 1) };
        let draws = fit(&panel, &graph, &cfg).unwrap();
        assert!(draws[0].states.iter().all(|s| s.effects.is_empty()));
    }
}
