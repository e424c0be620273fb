mod common;

use pandemon_core::grid::{Cause, DurationMatrix, EventGrid};
use pandemon_core::hazard::{estimate_all_causes, estimate_hazard};
use pandemon_core::kernel::Epanechnikov;
use pandemon_core::sim::replicate_rng;
use pandemon_core::smoothing::{correction_weight, local_moments, ProductWindow};
use pandemon_core::Bandwidths;
use proptest::prelude::*;
use rand::Rng;

fn random_grid(seed: u64, days: usize, cap: usize, holes: bool) -> EventGrid {
    let mut rng = replicate_rng(seed, 0);
    let mut g = EventGrid::zeros(days, cap);
    g.exposure = DurationMatrix::from_fn(days, cap, |_, _| {
        if holes && rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.5..40.0)
        }
    });
    g.deaths = g.exposure.map(|e| (e * 0.1).floor());
    g.recoveries = g.exposure.map(|e| (e * 0.25).floor());
    g
}

fn check_against_oracle(grid: &EventGrid, b1: f64, b2: f64) {
    let b = Bandwidths::new(b1, b2).unwrap();
    let occ = grid.occurrences();
    let est = estimate_hazard(grid, Cause::All, b, &Epanechnikov);
    let oracle = common::brute_force_hazard(&common::rows(&grid.exposure), &common::rows(&occ), b1, b2);
    for t in 0..grid.days() {
        for w in 0..=grid.max_duration().min(t) {
            match oracle[t][w] {
                Some(o) => {
                    assert!(est.is_defined(t, w), "({t}, {w}) should be defined");
                    assert!((est.raw(t, w) - o).abs() < 1e-10, "({t}, {w}): {} vs {o}", est.raw(t, w));
                    assert!((est.get(t, w).unwrap() - o.clamp(0.0, 1.0)).abs() < 1e-10);
                }
                None => assert!(!est.is_defined(t, w), "({t}, {w}) should be masked"),
            }
        }
    }
}

#[test]
fn six_by_six_toy_grid() {
    check_against_oracle(&random_grid(11, 6, 5, false), 2.0, 2.0);
}

#[test]
fn ten_by_ten_with_holes() {
    check_against_oracle(&random_grid(12, 10, 9, true), 3.0, 4.0);
    check_against_oracle(&random_grid(13, 10, 4, true), 5.5, 1.5);
}

#[test]
fn cause_surfaces_add_up_to_all_cause() {
    let g = random_grid(14, 40, 20, true);
    let s = estimate_all_causes(&g, Bandwidths::new(5.0, 3.0).unwrap(), &Epanechnikov);
    for (t, w, _) in s.all.defined_cells() {
        let sum = s.recovery.raw(t, w) + s.death.raw(t, w);
        assert!((sum - s.all.raw(t, w)).abs() < 1e-12);
    }
}

#[test]
fn adding_events_at_the_cell_never_lowers_the_estimate() {
    let g = random_grid(15, 30, 15, false);
    let b = Bandwidths::new(4.0, 4.0).unwrap();
    let before = estimate_hazard(&g, Cause::Death, b, &Epanechnikov);
    let window = ProductWindow::new(&Epanechnikov, b);
    for (t, w) in [(0, 0), (10, 3), (29, 15), (20, 0)] {
        let m = local_moments(t, w, &g.exposure, &window);
        assert!(correction_weight(0.0, 0.0, &m) > 0.0);
        let mut more = g.clone();
        more.deaths.add(t, w, 3.0);
        let after = estimate_hazard(&more, Cause::Death, b, &Epanechnikov);
        assert!(after.raw(t, w) >= before.raw(t, w));
    }
}

#[test]
fn correction_weights_are_orthogonal_to_offsets() {
    let g = random_grid(16, 25, 12, true);
    let b = Bandwidths::new(5.0, 4.0).unwrap();
    let window = ProductWindow::new(&Epanechnikov, b);
    for (t, w) in [(0, 0), (12, 6), (24, 12), (24, 0), (3, 3)] {
        let m = local_moments(t, w, &g.exposure, &window);
        if m.degenerate {
            continue;
        }
        let (mut s1, mut s2, mut scale) = (0.0, 0.0, 0.0);
        window.for_each(&g.exposure, t, w, |u, wp, x1, x2, k| {
            let c = correction_weight(x1, x2, &m);
            let e = g.exposure.get(u, wp);
            s1 += c * k * e * x1;
            s2 += c * k * e * x2;
            scale += (k * e * x1).abs() + (k * e * x2).abs();
        });
        assert!(s1.abs() < 1e-10 * scale, "({t}, {w}): {s1}");
        assert!(s2.abs() < 1e-10 * scale, "({t}, {w}): {s2}");
        // the moment matrix is symmetric positive semidefinite
        let [[p, q], [q2, r]] = m.a_mat;
        assert_eq!(q, q2);
        assert!(p >= 0.0 && r >= 0.0 && p * r - q * q >= -1e-9 * p * r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_grids_match_brute_force(
        seed in any::<u64>(),
        days in 2usize..=10,
        cap_frac in 0.1f64..1.0,
        b1 in 1.0f64..6.0,
        b2 in 1.0f64..6.0,
        holes in any::<bool>(),
    ) {
        let cap = ((days - 1) as f64 * cap_frac).ceil().max(1.0) as usize;
        check_against_oracle(&random_grid(seed, days, cap, holes), b1, b2);
    }

    #[test]
    fn constants_are_reproduced(
        seed in any::<u64>(),
        mu0 in 0.0f64..0.9,
        b1 in 1.0f64..25.0,
        b2 in 1.0f64..25.0,
    ) {
        let mut g = random_grid(seed, 50, 30, true);
        g.deaths = g.exposure.map(|e| mu0 * e);
        let s = estimate_hazard(&g, Cause::Death, Bandwidths::new(b1, b2).unwrap(), &Epanechnikov);
        for (_, _, v) in s.defined_cells() {
            prop_assert!((v - mu0).abs() < 1e-10);
        }
    }
}
