//! Occurrence and exposure grids indexed by (calendar day, duration).
//!
//! Cell `(u, w)` describes the cohort admitted on day `v = u - w` as seen on
//! day `u`. Durations beyond the tracked maximum `W` are pooled into `w = W`.

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;

/// Dense lower-triangular matrix over `u in 0..days`, `w in 0..=min(u, W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationMatrix {
    days: usize,
    max_duration: usize,
    data: Vec<f64>,
}

impl DurationMatrix {
    pub fn zeros(days: usize, max_duration: usize) -> Self {
        Self {
            days,
            max_duration,
            data: vec![0.0; days * (max_duration + 1)],
        }
    }

    pub fn from_fn(days: usize, max_duration: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(days, max_duration);
        for u in 0..days {
            for w in 0..=max_duration.min(u) {
                m.data[u * (max_duration + 1) + w] = f(u, w);
            }
        }
        m
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn max_duration(&self) -> usize {
        self.max_duration
    }

    /// Whether `(u, w)` lies in the feasible triangle.
    #[inline]
    pub fn is_cell(&self, u: usize, w: usize) -> bool {
        u < self.days && w <= self.max_duration && w <= u
    }

    #[inline]
    fn index(&self, u: usize, w: usize) -> usize {
        debug_assert!(self.is_cell(u, w), "cell ({u}, {w}) outside grid");
        u * (self.max_duration + 1) + w
    }

    #[inline]
    pub fn get(&self, u: usize, w: usize) -> f64 {
        self.data[self.index(u, w)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, w: usize, value: f64) {
        let i = self.index(u, w);
        self.data[i] = value;
    }

    #[inline]
    pub fn add(&mut self, u: usize, w: usize, value: f64) {
        let i = self.index(u, w);
        self.data[i] += value;
    }

    /// Feasible cells of row `u`, indexed by duration.
    pub fn row(&self, u: usize) -> &[f64] {
        let start = u * (self.max_duration + 1);
        &self.data[start..start + self.max_duration.min(u) + 1]
    }

    pub fn row_mut(&mut self, u: usize) -> &mut [f64] {
        let start = u * (self.max_duration + 1);
        let len = self.max_duration.min(u) + 1;
        &mut self.data[start..start + len]
    }

    pub fn row_sum(&self, u: usize) -> f64 {
        self.row(u).iter().sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.days).map(|u| self.row_sum(u)).sum()
    }

    /// Iterates `(u, w, value)` over the feasible triangle.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.days).flat_map(move |u| self.row(u).iter().enumerate().map(move |(w, &x)| (u, w, x)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x = f(*x));
        out
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.days, self.max_duration), (other.days, other.max_duration));
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a = f(*a, b));
        out
    }

    /// Row-major nested vectors `[u][w]` over the full `days x (W + 1)`
    /// rectangle; infeasible cells are zero.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.max_duration + 1)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EstimationError> {
        let days = rows.len();
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(EstimationError::InvalidGrid("ragged or empty matrix".into()));
        }
        Ok(Self {
            days,
            max_duration: width - 1,
            data: rows.concat(),
        })
    }
}

/// How a hospital stay ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StayOutcome {
    Recovery,
    Death,
    /// Still in hospital on the last observed day.
    Censored,
}

impl std::str::FromStr for StayOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recovery" | "discharge" => Ok(Self::Recovery),
            "death" => Ok(Self::Death),
            "censored" => Ok(Self::Censored),
            other => Err(format!("unknown cause `{other}`")),
        }
    }
}

/// One individual (or `count` identical individuals) followed from admission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub admit_day: usize,
    /// Exit day, or last observed day for censored stays.
    pub exit_day: usize,
    pub outcome: StayOutcome,
}

/// Which exits a hazard refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    All,
    Recovery,
    Death,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::All => "all",
            Cause::Recovery => "recovery",
            Cause::Death => "death",
        }
    }
}

impl std::str::FromStr for Cause {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "recovery" | "recoveries" | "discharge" => Ok(Self::Recovery),
            "death" | "deaths" => Ok(Self::Death),
            other => Err(format!("unknown cause `{other}`")),
        }
    }
}

impl std::fmt::Display for Cause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Occurrences by cause and at-risk person-days on the (day, duration) grid.
///
/// Under full information the entries are integer counts; imputed grids carry
/// fractional mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventGrid {
    pub recoveries: DurationMatrix,
    pub deaths: DurationMatrix,
    pub exposure: DurationMatrix,
}

impl EventGrid {
    pub fn zeros(days: usize, max_duration: usize) -> Self {
        Self {
            recoveries: DurationMatrix::zeros(days, max_duration),
            deaths: DurationMatrix::zeros(days, max_duration),
            exposure: DurationMatrix::zeros(days, max_duration),
        }
    }

    pub fn days(&self) -> usize {
        self.exposure.days()
    }

    pub fn max_duration(&self) -> usize {
        self.exposure.max_duration()
    }

    /// All-cause occurrences.
    pub fn occurrences(&self) -> DurationMatrix {
        self.recoveries.zip_with(&self.deaths, |a, b| a + b)
    }

    pub fn occurrences_for(&self, cause: Cause) -> DurationMatrix {
        match cause {
            Cause::All => self.occurrences(),
            Cause::Recovery => self.recoveries.clone(),
            Cause::Death => self.deaths.clone(),
        }
    }

    /// Adds `count` identical stays: exposure on every day from admission to
    /// exit inclusive, one occurrence on the exit day unless censored.
    pub fn add_stays(&mut self, admit: usize, exit: usize, outcome: StayOutcome, count: f64) {
        let cap = self.max_duration();
        for u in admit..=exit {
            self.exposure.add(u, (u - admit).min(cap), count);
        }
        let w = (exit - admit).min(cap);
        match outcome {
            StayOutcome::Recovery => self.recoveries.add(exit, w, count),
            StayOutcome::Death => self.deaths.add(exit, w, count),
            StayOutcome::Censored => {}
        }
    }

    /// Direct counting from individual records.
    pub fn from_records(
        records: &[StayRecord],
        days: usize,
        max_duration: usize,
    ) -> Result<Self, EstimationError> {
        let mut grid = Self::zeros(days, max_duration);
        for (index, r) in records.iter().enumerate() {
            if r.admit_day > r.exit_day || r.exit_day >= days {
                return Err(EstimationError::InvalidRecord {
                    index,
                    message: format!(
                        "need admit <= exit < {days}, got admit {} exit {}",
                        r.admit_day, r.exit_day
                    ),
                });
            }
            grid.add_stays(r.admit_day, r.exit_day, r.outcome, 1.0);
        }
        Ok(grid)
    }
}

/// Unsmoothed cellwise occurrence/exposure ratio; `None` without exposure.
pub fn occurrence_exposure_ratio(grid: &EventGrid, cause: Cause, u: usize, w: usize) -> Option<f64> {
    let e = grid.exposure.get(u, w);
    if e <= 0.0 {
        return None;
    }
    let o = match cause {
        Cause::All => grid.recoveries.get(u, w) + grid.deaths.get(u, w),
        Cause::Recovery => grid.recoveries.get(u, w),
        Cause::Death => grid.deaths.get(u, w),
    };
    Some(o / e)
}
