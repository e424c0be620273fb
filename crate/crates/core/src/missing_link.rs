//! Hazard estimation when only the marginal daily series are observed.
//!
//! Admissions and exits are not linked: we never see which admission cohort
//! an exit belongs to. Starting from a constant hazard, each iteration
//! distributes the observed exits and the observed number at risk over the
//! admission cohorts in proportion to their model-implied share, then
//! re-estimates the local-linear hazard on the imputed grid. Iteration stops
//! at a fixed point.
//!
//! Cohort allocation on day `u` for cohort `v` (duration `d = u - v`):
//!
//! * exits:   `S(u, d) mu(u, d) n2[v] / sum_w S(u, u - w) mu(u, u - w) n2[w]`
//! * at risk: `S(u, d) n2[v] / sum_w S(u, u - w) n2[w]`
//!
//! where `S(u, d) = prod_{k < d} (1 - mu(v + k, k))` is the probability that a
//! patient admitted on `v` is still in hospital at the start of day `u`.

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::{Cause, DurationMatrix, EventGrid};
use crate::hazard::{estimate_all_causes, estimate_hazard, CauseSurfaces, HazardSurface};
use crate::kernel::Kernel;
use crate::panel::DailyPanel;
use crate::smoothing::Bandwidths;

/// Allocation denominators at or below this are treated as zero.
pub const ALLOCATION_EPS: f64 = 1e-12;

/// Probability of still being in hospital at the start of day `t` after
/// admission on day `s`. Undefined hazard cells count as zero hazard.
pub fn survival_from_hazard(mu: &HazardSurface, s: usize, t: usize) -> f64 {
    assert!(s <= t, "survival needs s <= t");
    (0..t - s).map(|w| 1.0 - mu.hazard_or_zero(s + w, w)).product()
}

/// `surv[v][d]` for every cohort `v` and elapsed duration `d` within the
/// window, computed by running products along cohort diagonals.
fn cohort_survival(mu: &HazardSurface, days: usize) -> Vec<Vec<f64>> {
    (0..days)
        .map(|v| {
            let mut s = Vec::with_capacity(days - v);
            let mut acc = 1.0;
            for d in 0..days - v {
                s.push(acc);
                acc *= 1.0 - mu.hazard_or_zero(v + d, d);
            }
            s
        })
        .collect()
}

/// Imputed occurrence and exposure grids from one allocation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedGrid {
    /// Imputed all-cause exits `N_hat(u, w)`.
    pub exits: DurationMatrix,
    /// Imputed number at risk `Y_hat(u, w)`.
    pub at_risk: DurationMatrix,
    /// Iteration that produced this grid (1-based).
    pub iteration: usize,
    /// Days whose exits could not be allocated (no weighted survivors).
    pub flagged_exit_rows: Vec<usize>,
    /// Days whose occupancy could not be allocated.
    pub flagged_risk_rows: Vec<usize>,
}

impl ImputedGrid {
    /// Event grid with exits split by cause in proportion to the day's
    /// recoveries and deaths.
    pub fn to_event_grid(&self, panel: &DailyPanel) -> EventGrid {
        let n3 = panel.discharges();
        let n4 = panel.deaths_in();
        let mut grid = EventGrid::zeros(self.exits.days(), self.exits.max_duration());
        for u in 0..self.exits.days() {
            let total = (n3[u] + n4[u]) as f64;
            if total == 0.0 {
                continue;
            }
            let (f3, f4) = (n3[u] as f64 / total, n4[u] as f64 / total);
            for (w, &x) in self.exits.row(u).iter().enumerate() {
                grid.recoveries.set(u, w, x * f3);
                grid.deaths.set(u, w, x * f4);
            }
        }
        grid.exposure = self.at_risk.clone();
        grid
    }
}

fn check_shape(panel: &DailyPanel, mu: &HazardSurface) -> Result<(), EstimationError> {
    if mu.days() != panel.days() {
        return Err(EstimationError::InvalidGrid(format!(
            "hazard covers {} days but the panel has {}",
            mu.days(),
            panel.days()
        )));
    }
    Ok(())
}

/// Allocates `totals[u]` over cohorts with weights `weight(u, v)`, pooling
/// durations beyond the cap. Returns the matrix and flagged rows.
fn allocate(
    panel: &DailyPanel,
    max_duration: usize,
    totals: &[u64],
    mut weight: impl FnMut(usize, usize) -> f64,
) -> (DurationMatrix, Vec<usize>) {
    let days = panel.days();
    let mut out = DurationMatrix::zeros(days, max_duration);
    let mut flagged = Vec::new();
    let mut buf = vec![0.0; days];
    for u in 0..days {
        let mut denom = 0.0;
        for v in 0..=u {
            buf[v] = weight(u, v);
            denom += buf[v];
        }
        if totals[u] == 0 {
            continue;
        }
        if !(denom > ALLOCATION_EPS) {
            flagged.push(u);
            continue;
        }
        let scale = totals[u] as f64 / denom;
        let row = out.row_mut(u);
        for v in 0..=u {
            let d = (u - v).min(max_duration);
            row[d] += buf[v] * scale;
        }
    }
    (out, flagged)
}

/// Imputed exits `N_hat` from the current hazard.
pub fn impute_occurrences(
    panel: &DailyPanel,
    mu: &HazardSurface,
) -> Result<(DurationMatrix, Vec<usize>), EstimationError> {
    check_shape(panel, mu)?;
    let surv = cohort_survival(mu, panel.days());
    let n2 = panel.admissions();
    Ok(allocate(panel, mu.max_duration(), &panel.exits(), |u, v| {
        surv[v][u - v] * mu.hazard_or_zero(u, u - v) * n2[v] as f64
    }))
}

/// Imputed number at risk `Y_hat` from the current hazard.
pub fn impute_exposure(
    panel: &DailyPanel,
    mu: &HazardSurface,
) -> Result<(DurationMatrix, Vec<usize>), EstimationError> {
    check_shape(panel, mu)?;
    let surv = cohort_survival(mu, panel.days());
    let n2 = panel.admissions();
    Ok(allocate(panel, mu.max_duration(), &panel.at_risk(), |u, v| {
        surv[v][u - v] * n2[v] as f64
    }))
}

/// Both halves of one imputation step.
pub fn impute_grid(
    panel: &DailyPanel,
    mu: &HazardSurface,
    iteration: usize,
) -> Result<ImputedGrid, EstimationError> {
    check_shape(panel, mu)?;
    let surv = cohort_survival(mu, panel.days());
    let n2 = panel.admissions();
    let (exits, flagged_exit_rows) = allocate(panel, mu.max_duration(), &panel.exits(), |u, v| {
        surv[v][u - v] * mu.hazard_or_zero(u, u - v) * n2[v] as f64
    });
    let (at_risk, flagged_risk_rows) = allocate(panel, mu.max_duration(), &panel.at_risk(), |u, v| {
        surv[v][u - v] * n2[v] as f64
    });
    Ok(ImputedGrid {
        exits,
        at_risk,
        iteration,
        flagged_exit_rows,
        flagged_risk_rows,
    })
}

/// End-of-day occupancy on `day` allocated over durations (pooled at the
/// cap): cohort weights are the expected survivors `S mu`-complements.
pub fn impute_standing(
    panel: &DailyPanel,
    mu: &HazardSurface,
    day: usize,
) -> Result<Vec<f64>, EstimationError> {
    check_shape(panel, mu)?;
    let cap = mu.max_duration();
    let n2 = panel.admissions();
    let occupancy = panel.occupancy()[day] as f64;
    let mut out = vec![0.0; cap + 1];
    if occupancy == 0.0 {
        return Ok(out);
    }
    let mut weights = Vec::with_capacity(day + 1);
    for v in 0..=day {
        let s = survival_from_hazard(mu, v, day + 1);
        weights.push(s * n2[v] as f64);
    }
    let denom: f64 = weights.iter().sum();
    if !(denom > ALLOCATION_EPS) {
        // no model-implied survivors: fall back to admission counts
        let plain: f64 = n2[..=day].iter().map(|&x| x as f64).sum();
        for v in 0..=day {
            out[(day - v).min(cap)] += occupancy * n2[v] as f64 / plain;
        }
        return Ok(out);
    }
    for (v, w) in weights.into_iter().enumerate() {
        out[(day - v).min(cap)] += occupancy * w / denom;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    /// Stop when the sup relative change falls below this.
    pub tolerance: f64,
    /// Floor added to the previous value in the relative change.
    pub relative_floor: f64,
    pub max_iterations: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            relative_floor: 1e-6,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub sup_rel_change: Vec<f64>,
    pub converged: bool,
    pub bandwidths: Bandwidths,
    pub initial_hazard: f64,
    pub flagged_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingLinkFit {
    pub hazard: HazardSurface,
    pub grid: ImputedGrid,
    pub diagnostics: FitDiagnostics,
}

/// Total exits over total person-days at risk.
pub fn initial_hazard(panel: &DailyPanel) -> f64 {
    let exits: u64 = panel.exits().iter().sum();
    let exposure: u64 = panel.at_risk().iter().sum();
    if exposure == 0 {
        0.0
    } else {
        exits as f64 / exposure as f64
    }
}

/// `sup |new - old| / (old + floor)` over cells defined in `new`.
fn sup_relative_change(new: &HazardSurface, old: &HazardSurface, floor: f64) -> f64 {
    new.defined_cells()
        .map(|(t, w, v)| {
            let prev = old.hazard_or_zero(t, w);
            (v - prev).abs() / (prev + floor)
        })
        .fold(0.0, f64::max)
}

/// Iterates impute/estimate from `start` until the fixed point is reached
/// or the iteration budget runs out.
pub fn iterate_from(
    panel: &DailyPanel,
    start: HazardSurface,
    bandwidths: Bandwidths,
    kernel: &dyn Kernel,
    opts: IterationOptions,
) -> Result<MissingLinkFit, EstimationError> {
    let initial = start.get(0, 0).unwrap_or(0.0);
    let mut current = start;
    let mut changes = Vec::new();
    let mut converged = false;
    let mut last_grid = None;
    for r in 1..=opts.max_iterations.max(1) {
        let imputed = impute_grid(panel, &current, r)?;
        let next = estimate_hazard(&imputed.to_event_grid(panel), Cause::All, bandwidths, kernel);
        let change = sup_relative_change(&next, &current, opts.relative_floor);
        changes.push(change);
        current = next;
        last_grid = Some(imputed);
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }
    let grid = last_grid.expect("at least one iteration");
    let mut flagged: Vec<usize> = grid
        .flagged_exit_rows
        .iter()
        .chain(&grid.flagged_risk_rows)
        .copied()
        .collect();
    flagged.sort_unstable();
    flagged.dedup();
    Ok(MissingLinkFit {
        hazard: current,
        diagnostics: FitDiagnostics {
            iterations: changes.len(),
            sup_rel_change: changes,
            converged,
            bandwidths,
            initial_hazard: initial,
            flagged_rows: flagged,
        },
        grid,
    })
}

/// Missing-link fit starting from the constant hazard guess.
pub fn fit_missing_link(
    panel: &DailyPanel,
    max_duration: usize,
    bandwidths: Bandwidths,
    kernel: &dyn Kernel,
    opts: IterationOptions,
) -> Result<MissingLinkFit, EstimationError> {
    crate::panel::TimeGridConvention::new(max_duration, panel.days())?;
    let start = HazardSurface::constant(panel.days(), max_duration, initial_hazard(panel), Cause::All);
    iterate_from(panel, start, bandwidths, kernel, opts)
}

/// Imputed grid under the constant starting hazard; used for bandwidth
/// selection before iterating.
pub fn initial_imputation(panel: &DailyPanel, max_duration: usize) -> Result<EventGrid, EstimationError> {
    let start = HazardSurface::constant(panel.days(), max_duration, initial_hazard(panel), Cause::All);
    Ok(impute_grid(panel, &start, 0)?.to_event_grid(panel))
}

/// Cause-specific surfaces from the final imputation: each day's exits are
/// split by that day's recovery/death counts with the same cohort weights,
/// and smoothed against the same imputed exposure.
pub fn split_causes(
    panel: &DailyPanel,
    fit: &MissingLinkFit,
    kernel: &dyn Kernel,
) -> CauseSurfaces {
    estimate_all_causes(
        &fit.grid.to_event_grid(panel),
        fit.diagnostics.bandwidths,
        kernel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Epanechnikov;
    use chrono::NaiveDate;

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 18).unwrap()
    }

    #[test]
    fn survival_products() {
        let zero = HazardSurface::constant(10, 5, 0.0, Cause::All);
        assert_eq!(survival_from_hazard(&zero, 2, 8), 1.0);
        let c = HazardSurface::constant(10, 6, 0.1, Cause::All);
        assert!((survival_from_hazard(&c, 1, 6) - 0.59049).abs() < 1e-15);
        assert_eq!(survival_from_hazard(&c, 4, 4), 1.0);
        let piece = HazardSurface::from_fn(5, 3, Cause::All, |_, w| [0.5, 0.2, 0.0, 0.0][w]);
        assert!((survival_from_hazard(&piece, 1, 3) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_cohort_gets_everything() {
        let n2 = vec![50, 0, 0, 0, 0, 0];
        let n3 = vec![1, 3, 5, 2, 0, 4];
        let n4 = vec![0, 1, 0, 2, 1, 0];
        let p = DailyPanel::new(d0(), None, n2, n3, n4, None).unwrap();
        let mu = HazardSurface::from_fn(6, 5, Cause::All, |t, w| 0.02 + 0.01 * (t + w) as f64);
        let (exits, flagged) = impute_occurrences(&p, &mu).unwrap();
        assert!(flagged.is_empty());
        let (risk, _) = impute_exposure(&p, &mu).unwrap();
        for u in 0..6 {
            assert_eq!(exits.get(u, u), p.exits()[u] as f64);
            assert_eq!(risk.get(u, u), p.at_risk()[u] as f64);
        }
    }

    #[test]
    fn equal_cohorts_split_evenly() {
        // two cohorts of 20 on days 0 and 1, hazard depends on calendar day only
        let p = DailyPanel::new(d0(), None, vec![20, 20, 0, 0], vec![0, 2, 4, 4], vec![0, 0, 0, 2], None)
            .unwrap();
        let mu = HazardSurface::from_fn(4, 3, Cause::All, |t, _| [0.0, 0.05, 0.1, 0.1][t]);
        let (exits, _) = impute_occurrences(&p, &mu).unwrap();
        // day 2: S(2,2) = (1-0)(1-0.05) for cohort 0, S(2,1) = 1 - 0.05 for cohort 1
        assert!((exits.get(2, 2) - 2.0).abs() < 1e-12);
        assert!((exits.get(2, 1) - 2.0).abs() < 1e-12);
        let (risk, _) = impute_exposure(&p, &mu).unwrap();
        assert!((risk.get(2, 2) - risk.get(2, 1)).abs() < 1e-12);
    }

    #[test]
    fn proportional_exposure_allocation() {
        // three cohorts with survival weights 0.5, 0.3, 0.2 on day 3
        let p = DailyPanel::new(
            d0(),
            None,
            vec![10, 6, 4, 0],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
            None,
        )
        .unwrap();
        let mu = HazardSurface::constant(4, 3, 0.0, Cause::All);
        let (risk, _) = impute_exposure(&p, &mu).unwrap();
        assert!((risk.get(3, 3) - 10.0).abs() < 1e-12);
        assert!((risk.get(3, 2) - 6.0).abs() < 1e-12);
        assert!((risk.get(3, 1) - 4.0).abs() < 1e-12);
        // scaled case: Y(u)=10 split 5/3/2
        let p2 = DailyPanel::new(d0(), None, vec![5, 3, 2, 0], vec![0; 4], vec![0; 4], None).unwrap();
        let (risk2, _) = impute_exposure(&p2, &mu).unwrap();
        assert_eq!(
            (risk2.get(3, 3), risk2.get(3, 2), risk2.get(3, 1)),
            (5.0, 3.0, 2.0)
        );
    }

    #[test]
    fn exits_without_survivors_are_flagged() {
        let p = DailyPanel::new(d0(), None, vec![5, 0, 0], vec![0, 2, 1], vec![0; 3], None).unwrap();
        let mu = HazardSurface::constant(3, 2, 0.0, Cause::All);
        let (exits, flagged) = impute_occurrences(&p, &mu).unwrap();
        assert_eq!(flagged, vec![1, 2]);
        assert_eq!(exits.row_sum(1), 0.0);
    }

    #[test]
    fn zero_exits_fit_in_one_step() {
        let p = DailyPanel::new(d0(), None, vec![3; 12], vec![0; 12], vec![0; 12], None).unwrap();
        let b = Bandwidths::new(3.0, 3.0).unwrap();
        let fit = fit_missing_link(&p, 5, b, &Epanechnikov, IterationOptions::default()).unwrap();
        assert!(fit.diagnostics.converged);
        assert_eq!(fit.diagnostics.iterations, 1);
        assert!(fit.hazard.defined_cells().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn standing_population_sums_to_occupancy() {
        let p = DailyPanel::new(d0(), None, vec![10, 5, 8, 2], vec![0, 3, 2, 4], vec![1, 0, 1, 1], None)
            .unwrap();
        let mu = HazardSurface::constant(4, 2, 0.2, Cause::All);
        let standing = impute_standing(&p, &mu, 3).unwrap();
        let total: f64 = standing.iter().sum();
        assert!((total - p.occupancy()[3] as f64).abs() < 1e-12);
    }
}
