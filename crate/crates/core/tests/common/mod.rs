//! Independent reference implementations and generators shared by the
//! integration tests. Nothing here calls into the smoothing code under test.

#![allow(dead_code)]

use chrono::NaiveDate;
use pandemon_core::grid::{Cause, DurationMatrix};
use pandemon_core::hazard::HazardSurface;
use pandemon_core::DailyPanel;
use rand::Rng;

pub fn epanechnikov(x: f64, b: f64) -> f64 {
    let z = x / b;
    if z.abs() <= 1.0 {
        0.75 * (1.0 - z * z) / b
    } else {
        0.0
    }
}

/// Straight double loop over every grid cell for every evaluation cell.
/// Returns the unclipped local-linear ratio, `None` where undefined.
pub fn brute_force_hazard(
    exposure: &[Vec<f64>],
    occurrences: &[Vec<f64>],
    b1: f64,
    b2: f64,
) -> Vec<Vec<Option<f64>>> {
    let days = exposure.len();
    let mut out = Vec::with_capacity(days);
    for t in 0..days {
        let mut row = Vec::new();
        for w in 0..exposure[t].len() {
            // first and second exposure moments
            let (mut s0, mut a1, mut a2) = (0.0, 0.0, 0.0);
            let (mut m11, mut m12, mut m22) = (0.0, 0.0, 0.0);
            for u in 0..days {
                for wp in 0..exposure[u].len() {
                    let x1 = t as f64 - u as f64;
                    let x2 = w as f64 - wp as f64;
                    let k = epanechnikov(x1, b1) * epanechnikov(x2, b2) * exposure[u][wp];
                    s0 += k;
                    a1 += k * x1;
                    a2 += k * x2;
                    m11 += k * x1 * x1;
                    m12 += k * x1 * x2;
                    m22 += k * x2 * x2;
                }
            }
            let det = m11 * m22 - m12 * m12;
            // condition number of the symmetric 2x2 matrix
            let tr = m11 + m22;
            let disc = ((m11 - m22) * (m11 - m22) + 4.0 * m12 * m12).sqrt();
            let (hi, lo) = (0.5 * (tr + disc), 0.5 * (tr - disc));
            let singular = det <= 0.0 || lo <= 0.0 || hi / lo > 1e12;
            let (c1, c2) = if singular {
                (0.0, 0.0)
            } else {
                ((m22 * a1 - m12 * a2) / det, (m11 * a2 - m12 * a1) / det)
            };
            let (mut num, mut den) = (0.0, 0.0);
            for u in 0..days {
                for wp in 0..exposure[u].len() {
                    let x1 = t as f64 - u as f64;
                    let x2 = w as f64 - wp as f64;
                    let k = epanechnikov(x1, b1) * epanechnikov(x2, b2);
                    let c = 1.0 - (x1 * c1 + x2 * c2);
                    num += k * c * occurrences[u][wp];
                    den += k * c * exposure[u][wp];
                }
            }
            row.push(if s0 > 0.0 && den > 1e-8 { Some(num / den) } else { None });
        }
        out.push(row);
    }
    out
}

/// Random consistent panel: exits never exceed the people present that day.
pub fn random_panel<R: Rng>(rng: &mut R, days: usize, with_outside: bool) -> DailyPanel {
    let mut n2 = Vec::with_capacity(days);
    let mut n3 = Vec::with_capacity(days);
    let mut n4 = Vec::with_capacity(days);
    let mut level = 0u64;
    for day in 0..days {
        let a = if day == 0 { rng.random_range(1..40) } else { rng.random_range(0..40) };
        let present = level + a;
        let exits = rng.random_range(0..=present / 2);
        let deaths = rng.random_range(0..=exits);
        n2.push(a);
        n3.push(exits - deaths);
        n4.push(deaths);
        level = present - exits;
    }
    let n_out = with_outside.then(|| n4.iter().map(|&d| d / 2).collect());
    DailyPanel::new(start(), None, n2, n3, n4, n_out).expect("generator keeps occupancy nonnegative")
}

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

/// Surface with arbitrary values in `[0, 1)` and occasional exact zeros.
pub fn random_surface<R: Rng>(rng: &mut R, days: usize, cap: usize) -> HazardSurface {
    HazardSurface::from_fn(days, cap, Cause::All, |_, _| {
        if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..0.9)
        }
    })
}

pub fn rows(m: &DurationMatrix) -> Vec<Vec<f64>> {
    m.to_rows()
}
