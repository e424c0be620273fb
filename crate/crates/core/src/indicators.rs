//! Monitoring indicators read off fitted hazard surfaces along cohort
//! diagonals: median length of stay and cause-specific exit probabilities.

use serde::{Deserialize, Serialize};

use crate::grid::Cause;
use crate::hazard::HazardSurface;

/// Number of diagonal cells usable for a cohort admitted on `s`, starting at
/// duration `d`: stops at the duration cap and at the last observed day.
fn diagonal_end(mu: &HazardSurface, s: usize) -> usize {
    mu.max_duration().min(mu.days().saturating_sub(s + 1))
}

/// Smallest `d` such that the probability of having left by the end of
/// duration `d` reaches one half. `None` when the cohort's diagonal ends
/// first.
pub fn median_stay(mu: &HazardSurface, s: usize) -> Option<usize> {
    if s >= mu.days() {
        return None;
    }
    let mut survival = 1.0;
    for w in 0..=diagonal_end(mu, s) {
        survival *= 1.0 - mu.hazard_or_zero(s + w, w);
        if 1.0 - survival >= 0.5 {
            return Some(w);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitProbability {
    pub probability: f64,
    /// Mass still in hospital when the diagonal is cut off.
    pub remainder: f64,
}

/// Probability that a patient admitted on day `s` and still in hospital at
/// duration `d` eventually leaves by `cause`, truncated at the end of the
/// diagonal. The all-cause hazard is `mu3 + mu4`, capped at one.
pub fn exit_probability(
    recovery: &HazardSurface,
    death: &HazardSurface,
    s: usize,
    d: usize,
    cause: Cause,
) -> Option<ExitProbability> {
    if s >= recovery.days() || d > diagonal_end(recovery, s) {
        return None;
    }
    let mut survival = 1.0;
    let mut probability = 0.0;
    for w in d..=diagonal_end(recovery, s) {
        let m3 = recovery.hazard_or_zero(s + w, w);
        let m4 = death.hazard_or_zero(s + w, w);
        let all = m3 + m4;
        // keep the causes proportional when the sum exceeds one
        let scale = if all > 1.0 { 1.0 / all } else { 1.0 };
        let rate = match cause {
            Cause::Recovery => m3,
            Cause::Death => m4,
            Cause::All => all,
        } * scale;
        probability += survival * rate;
        survival *= 1.0 - all * scale;
    }
    Some(ExitProbability {
        probability,
        remainder: survival,
    })
}

/// Per-admission-day series of an indicator, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorPoint {
    pub day: usize,
    pub value: Option<f64>,
}

pub fn median_stay_series(mu: &HazardSurface) -> Vec<IndicatorPoint> {
    (0..mu.days())
        .map(|day| IndicatorPoint {
            day,
            value: median_stay(mu, day).map(|d| d as f64),
        })
        .collect()
}

pub fn exit_probability_series(
    recovery: &HazardSurface,
    death: &HazardSurface,
    d: usize,
    cause: Cause,
) -> Vec<IndicatorPoint> {
    (0..recovery.days())
        .map(|day| IndicatorPoint {
            day,
            value: exit_probability(recovery, death, day, d, cause).map(|p| p.probability),
        })
        .collect()
}
