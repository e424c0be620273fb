mod common;

use pandemon_core::forecast::{
    extrapolate_ratio, forecast_total_deaths, optimize_c2, BacktestObjective, ForecastProvenance,
    ForecastScenario,
};
use pandemon_core::grid::Cause;
use pandemon_core::hazard::HazardSurface;
use pandemon_core::indicators::exit_probability;
use pandemon_core::missing_link::{impute_grid, impute_standing};
use pandemon_core::sim::replicate_rng;
use pandemon_core::DailyPanel;
use proptest::prelude::*;
use rand::Rng;

fn provenance() -> ForecastProvenance {
    ForecastProvenance {
        model_id: None,
        admissions_model: "test".into(),
        g_last: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(seed in any::<u64>(), days in 1usize..60, outside in any::<bool>()) {
        let panel = common::random_panel(&mut replicate_rng(seed, 0), days, outside);
        let mut buf = Vec::new();
        panel.emit_csv(&mut buf).unwrap();
        let back = DailyPanel::ingest_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, panel);
    }

    #[test]
    fn occupancy_matches_running_balance(seed in any::<u64>(), days in 1usize..80) {
        let panel = common::random_panel(&mut replicate_rng(seed, 0), days, false);
        let occ = panel.occupancy();
        let at_risk = panel.at_risk();
        let exits = panel.exits();
        let mut balance: i64 = 0;
        for u in 0..days {
            balance += panel.admissions()[u] as i64 - exits[u] as i64;
            prop_assert!(balance >= 0);
            prop_assert_eq!(occ[u] as i64, balance);
            // at_risk counts everyone present during the day, including leavers
            prop_assert_eq!(at_risk[u], occ[u] + exits[u]);
        }
    }

    #[test]
    fn imputation_conserves_row_totals(seed in any::<u64>(), days in 2usize..60) {
        let mut rng = replicate_rng(seed, 0);
        let cap = rng.random_range(1..days).min(60);
        let panel = common::random_panel(&mut rng, days, false);
        let mu = common::random_surface(&mut rng, days, cap);
        let g = impute_grid(&panel, &mu, 1).unwrap();
        let exits = panel.exits();
        let at_risk = panel.at_risk();
        for u in 0..days {
            if !g.flagged_exit_rows.contains(&u) {
                prop_assert!((g.exits.row_sum(u) - exits[u] as f64).abs() <= 1e-9 * exits[u].max(1) as f64);
            }
            if !g.flagged_risk_rows.contains(&u) {
                prop_assert!((g.at_risk.row_sum(u) - at_risk[u] as f64).abs() <= 1e-9 * at_risk[u].max(1) as f64);
            }
            prop_assert!(g.exits.row(u).iter().chain(g.at_risk.row(u)).all(|&x| x >= 0.0));
        }
        let standing = impute_standing(&panel, &mu, days - 1).unwrap();
        let occ = panel.occupancy()[days - 1] as f64;
        let total: f64 = standing.iter().sum();
        prop_assert!(total == 0.0 || (total - occ).abs() <= 1e-9 * occ.max(1.0));
    }

    #[test]
    fn ratio_path_is_linear(g in 0.01f64..5.0, c2 in 0.25f64..4.0, h in 1usize..60) {
        prop_assert!((extrapolate_ratio(g, c2, h, h) - c2 * g).abs() <= 1e-12 * c2 * g);
        let step = (c2 - 1.0) * g / h as f64;
        for s in 1..=h {
            let expected = g + step * s as f64;
            prop_assert!((extrapolate_ratio(g, c2, h, s) - expected).abs() <= 1e-12 * (g + expected.abs()));
        }
    }

    #[test]
    fn totals_are_inside_times_one_plus_ratio(
        deaths in prop::collection::vec(0.0f64..500.0, 1..30),
        g in 0.0f64..3.0,
        c2 in 0.25f64..4.0,
    ) {
        let h = deaths.len();
        let scenario = ForecastScenario::new(10, h, 1.0, c2).unwrap();
        let r = forecast_total_deaths(vec![0.0; h], deaths.clone(), g, scenario, provenance());
        for s in 0..h {
            prop_assert_eq!(r.series.deaths_total[s], deaths[s] * (1.0 + r.series.g_tilde[s]));
            prop_assert_eq!(r.series.deaths_out[s], deaths[s] * r.series.g_tilde[s]);
        }
    }

    #[test]
    fn c2_search_recovers_its_own_generator(
        deaths in prop::collection::vec(1.0f64..500.0, 2..30),
        g in 0.05f64..3.0,
        index in 0usize..76,
    ) {
        let grid = pandemon_core::forecast::default_c2_grid();
        let c2 = grid[index];
        let h = deaths.len();
        let scenario = ForecastScenario::new(10, h, 1.0, c2).unwrap();
        let generated = forecast_total_deaths(vec![0.0; h], deaths.clone(), g, scenario, provenance());
        for objective in [BacktestObjective::Daily, BacktestObjective::Cumulative] {
            let found = optimize_c2(&deaths, g, &generated.series.deaths_total, &grid, objective).unwrap();
            prop_assert_eq!(found.c2_star, c2);
        }
    }

    #[test]
    fn exit_probabilities_and_remainder_sum_to_one(seed in any::<u64>(), s in 0usize..40, d in 0usize..10) {
        let mut rng = replicate_rng(seed, 0);
        let r = HazardSurface::from_fn(60, 30, Cause::Recovery, |_, _| rng.random_range(0.0..0.6));
        let dth = HazardSurface::from_fn(60, 30, Cause::Death, |_, _| rng.random_range(0.0..0.6));
        if let Some(alive) = exit_probability(&r, &dth, s, d, Cause::Recovery) {
            let dead = exit_probability(&r, &dth, s, d, Cause::Death).unwrap();
            prop_assert!((alive.probability + dead.probability + alive.remainder - 1.0).abs() < 1e-9);
        }
    }
}
