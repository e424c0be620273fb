mod common;

use pandemon_core::grid::{Cause, EventGrid, StayOutcome};
use pandemon_core::hazard::{estimate_all_causes, estimate_hazard, HazardSurface};
use pandemon_core::kernel::Epanechnikov;
use pandemon_core::missing_link::{fit_missing_link, split_causes, IterationOptions};
use pandemon_core::sim::{replicate_rng, simulate_cohorts, TrueModel};
use pandemon_core::study::ise;
use pandemon_core::{fit_model, Bandwidths, DailyPanel, FitConfig};

const DAYS: usize = 40;
const CAP: usize = 25;

/// One cohort of 500 admitted on day 0 with a fixed exit schedule. Returns
/// the panel an analyst sees and the grid counted from the linked records.
fn single_cohort() -> (DailyPanel, EventGrid) {
    let mut n2 = vec![0u64; DAYS];
    n2[0] = 500;
    let mut n3 = vec![0u64; DAYS];
    let mut n4 = vec![0u64; DAYS];
    let mut grid = EventGrid::zeros(DAYS, CAP);
    let mut left = 500u64;
    for u in 0..DAYS {
        let rec = (left / 12).min(left);
        let dead = ((left - rec) / 30).min(left - rec);
        n3[u] = rec;
        n4[u] = dead;
        grid.add_stays(0, u, StayOutcome::Recovery, rec as f64);
        grid.add_stays(0, u, StayOutcome::Death, dead as f64);
        left -= rec + dead;
    }
    grid.add_stays(0, DAYS - 1, StayOutcome::Censored, left as f64);
    let panel = DailyPanel::new(common::start(), None, n2, n3, n4, None).unwrap();
    (panel, grid)
}

#[test]
fn one_cohort_makes_the_link_vacuous() {
    let (panel, full) = single_cohort();
    let b = Bandwidths::new(4.0, 3.0).unwrap();
    let fit = fit_missing_link(&panel, CAP, b, &Epanechnikov, IterationOptions::default()).unwrap();
    assert!(fit.diagnostics.converged);
    let direct = estimate_hazard(&full, Cause::All, b, &Epanechnikov);
    for t in 0..DAYS {
        for w in 0..=CAP.min(t) {
            assert_eq!(fit.hazard.is_defined(t, w), direct.is_defined(t, w));
            assert!((fit.hazard.raw(t, w) - direct.raw(t, w)).abs() < 1e-10, "({t}, {w})");
        }
    }
    let split = split_causes(&panel, &fit, &Epanechnikov);
    let truth = estimate_all_causes(&full, b, &Epanechnikov);
    for (t, w, v) in truth.death.defined_cells() {
        assert!((split.death.get(t, w).unwrap() - v).abs() < 1e-10);
        assert!((split.recovery.get(t, w).unwrap() - truth.recovery.get(t, w).unwrap()).abs() < 1e-10);
    }
}

fn simulated(seed: u64) -> pandemon_core::sim::SimulatedPandemic {
    let model = TrueModel::two_waves(80, 5000.0).unwrap();
    simulate_cohorts(&model, &mut replicate_rng(seed, 0))
}

#[test]
fn no_deaths_means_zero_death_hazard() {
    let p = simulated(1).panel;
    let n3: Vec<u64> = p.discharges().iter().zip(p.deaths_in()).map(|(a, b)| a + b).collect();
    let panel = DailyPanel::new(p.start_date(), None, p.admissions().to_vec(), n3, vec![0; p.days()], None).unwrap();
    let b = Bandwidths::new(7.0, 7.0).unwrap();
    let fit = fit_missing_link(&panel, 40, b, &Epanechnikov, IterationOptions::default()).unwrap();
    let s = split_causes(&panel, &fit, &Epanechnikov);
    for (t, w, v) in s.all.defined_cells() {
        assert_eq!(s.death.get(t, w), Some(0.0));
        assert!((s.recovery.get(t, w).unwrap() - v).abs() < 1e-12);
    }
}

#[test]
fn equal_daily_causes_give_equal_surfaces() {
    let p = simulated(2).panel;
    let half: Vec<u64> = p.discharges().iter().zip(p.deaths_in()).map(|(a, b)| (a + b) / 2).collect();
    let panel = DailyPanel::new(p.start_date(), None, p.admissions().to_vec(), half.clone(), half, None).unwrap();
    let b = Bandwidths::new(7.0, 7.0).unwrap();
    let fit = fit_missing_link(&panel, 40, b, &Epanechnikov, IterationOptions::default()).unwrap();
    let s = split_causes(&panel, &fit, &Epanechnikov);
    for (t, w, v) in s.death.defined_cells() {
        assert_eq!(s.recovery.get(t, w), Some(v));
    }
}

#[test]
fn fits_are_deterministic_and_record_every_step() {
    let p = simulated(3).panel;
    let b = Bandwidths::new(10.0, 10.0).unwrap();
    let opts = IterationOptions {
        max_iterations: 7,
        ..IterationOptions::default()
    };
    let a = fit_missing_link(&p, 40, b, &Epanechnikov, opts).unwrap();
    let again = fit_missing_link(&p, 40, b, &Epanechnikov, opts).unwrap();
    assert_eq!(a.hazard, again.hazard);
    assert_eq!(a.diagnostics, again.diagnostics);
    assert_eq!(a.diagnostics.sup_rel_change.len(), a.diagnostics.iterations);
    assert!(a.diagnostics.iterations <= 7);
    for (_, _, v) in a.hazard.defined_cells() {
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    }
}

/// Cause surfaces share the all-cause duration shape, so only the calendar
/// share separates them. That is enough for deaths, whose true share of the
/// exit hazard is far from one half; recoveries get no such guarantee.
#[test]
fn death_split_beats_an_even_split() {
    let model = TrueModel::two_waves(120, 1e4).unwrap();
    let config = FitConfig {
        max_duration: Some(60),
        ..FitConfig::default()
    };
    let mut wins = 0;
    for seed in 0..5 {
        let sim = simulate_cohorts(&model, &mut replicate_rng(seed, 0));
        let fit = fit_model(&sim.panel, &config).unwrap();
        let all = &fit.hazards.all;
        let even = HazardSurface::from_fn(120, 60, Cause::Death, |t, w| 0.5 * all.hazard_or_zero(t, w));
        let (ours, _) = ise(&fit.hazards.death, &model, Cause::Death);
        let (naive, _) = ise(&even, &model, Cause::Death);
        if ours < naive {
            wins += 1;
        }
    }
    assert!(wins >= 4, "death split won {wins}/5");
}
