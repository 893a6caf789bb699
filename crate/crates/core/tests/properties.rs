use incmix_core::gibbs::{fit, grid_for, log_posterior};
use incmix_core::model::{McmcControls, ModelConfig, Variant};
use incmix_core::predict::{summarize, QuantitySet, Scope, SummaryOptions, SummaryTable};
use incmix_core::rng::RngStream;
use incmix_core::simgen::{evaluate, generate_setting1, generate_setting2, Setting1, Setting2, SimulationSizes};
use proptest::prelude::*;

fn small_sizes(n_areas: usize, n_sampled: usize, n_periods: usize) -> SimulationSizes {
    SimulationSizes {
        n_areas,
        n_sampled,
        n_periods,
        holdout_periods: 1,
        total_range: (20, 60),
        neighbour_radius: 0.6,
        ..SimulationSizes::desk()
    }
}

fn short_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        rho_grid_points: 9,
        mcmc: McmcControls {
            iterations: 12,
            burn_in: 8,
            thin: 1,
            seed,
        },
        ..ModelConfig::default()
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut state = seed | 1;
    for i in (1..n).rev() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        idx.swap(i, (state % (i as u64 + 1)) as usize);
    }
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_cells_are_consistent(seed in 0u64..1_000, setting in 1u8..=2) {
        let sizes = small_sizes(10, 7, 3);
        let mut rng = RngStream::new(seed);
        let truth = match setting {
            1 => generate_setting1(&mut rng, &sizes, &Setting1::default()).unwrap(),
            _ => generate_setting2(&mut rng, &sizes, &Setting2::default()).unwrap(),
        };
        for c in 0..truth.proportions.len() {
            let p = &truth.proportions[c];
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(truth.counts[c].iter().sum::<u32>(), truth.totals[c]);
            prop_assert!(truth.median[c] > 0.0 && truth.average[c] > 0.0);
            prop_assert!(truth.gini[c] > 0.0 && truth.gini[c] < 1.0);
        }
    }

    #[test]
    fn stored_draws_are_valid_with_finite_log_posterior(seed in 0u64..1_000, v in 0usize..3) {
        let variant = [Variant::SarRw, Variant::TwoWay, Variant::SpatialOnly][v];
        let truth = generate_setting1(&mut RngStream::new(seed), &small_sizes(9, 6, 3), &Setting1::default()).unwrap();
        let panel = truth.panel().unwrap();
        let config = short_config(variant, seed);
        let grid = grid_for(&truth.graph, &config).unwrap();
        for chain in fit(&panel, &truth.graph, &config).unwrap() {
            prop_assert_eq!(chain.states.len(), 12);
            let local = match chain.period {
                Some(t) => panel.period_slice(t).unwrap(),
                None => panel.clone(),
            };
            for s in &chain.states {
                prop_assert!(s.validate().is_ok());
                prop_assert!(grid.point(s.effects[0].rho_index) == s.effects[0].rho);
                prop_assert!(log_posterior(&local, &grid, &config, s).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn fitted_summaries_ignore_draw_order(seed in 0u64..1_000, shuffle in any::<u64>()) {
        let truth = generate_setting1(&mut RngStream::new(seed), &small_sizes(8, 6, 2), &Setting1::default()).unwrap();
        let panel = truth.panel().unwrap();
        let config = short_config(Variant::SarRw, seed);
        let grid = grid_for(&truth.graph, &config).unwrap();
        let draws = fit(&panel, &truth.graph, &config).unwrap();
        let mut shuffled = draws.clone();
        let order = permutation(draws[0].states.len(), shuffle);
        shuffled[0].states = order.iter().map(|&j| draws[0].states[j].clone()).collect();
        let opts = SummaryOptions { quantities: QuantitySet::parse("ai,mi,gini").unwrap(), ..SummaryOptions::default() };
        let run = |d| summarize(d, &panel, &grid, &opts, None, &mut RngStream::new(5)).unwrap();
        let (a, b): (SummaryTable, SummaryTable) = (run(&draws), run(&shuffled));
        let in_sample = |t: &SummaryTable| t.rows.iter().filter(|r| r.scope == Scope::InSample).cloned().collect::<Vec<_>>();
        let (ra, rb) = (in_sample(&a), in_sample(&b));
        prop_assert_eq!(ra.len(), 6 * 2 * 3);
        for (x, y) in ra.iter().zip(&rb) {
            // order statistics are exact; the mean may differ in the last bits of the sum
            prop_assert_eq!((x.area, x.period, x.quantity, x.lower, x.upper), (y.area, y.period, y.quantity, y.lower, y.upper));
            prop_assert!((x.mean - y.mean).abs() <= 1e-12 * x.mean.abs().max(1.0));
        }
    }

    #[test]
    fn evaluation_ignores_cell_order(seed in 0u64..1_000, shuffle in any::<u64>()) {
        let truth = generate_setting1(&mut RngStream::new(seed), &small_sizes(8, 6, 2), &Setting1::default()).unwrap();
        let cells = truth.cell_truths();
        let rows: Vec<_> = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let wobble = 1.0 + 0.05 * ((j * 37 % 11) as f64 - 5.0) / 5.0;
                incmix_core::predict::SummaryRow {
                    area: c.area,
                    period: c.period,
                    scope: if c.area < 6 { Scope::InSample } else { Scope::Spatial },
                    quantity: incmix_core::predict::Quantity::AverageIncome,
                    mean: c.average * wobble,
                    sd: 0.1,
                    lower: c.average * 0.97,
                    upper: c.average * 1.02,
                }
            })
            .collect();
        let table = SummaryTable { level: 0.95, rows: rows.clone() };
        let order = permutation(rows.len(), shuffle);
        let shuffled_table = SummaryTable { level: 0.95, rows: order.iter().map(|&j| rows[j].clone()).collect() };
        let shuffled_cells: Vec<_> = permutation(cells.len(), shuffle ^ 0xabc).iter().map(|&j| cells[j].clone()).collect();
        for scope in [Scope::InSample, Scope::Spatial] {
            let a = evaluate(&cells, &table, scope).unwrap();
            let b = evaluate(&shuffled_cells, &shuffled_table, scope).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
