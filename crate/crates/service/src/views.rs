//! JSON views of a fitted model, shared by the HTTP API and the CLI.

use chrono::NaiveDate;
use pandemon_core::indicators::{exit_probability_series, median_stay_series};
use pandemon_core::{Cause, FittedModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCell {
    pub duration: usize,
    pub value: Option<f64>,
    pub defined: bool,
}

/// Hazard on one calendar day as a function of duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSlice {
    pub date: NaiveDate,
    pub day: usize,
    pub cells: Vec<HazardCell>,
}

pub fn hazard_slices(model: &FittedModel, cause: Cause, days: &[usize]) -> Vec<HazardSlice> {
    let surface = model.surface(cause);
    days.iter()
        .map(|&t| HazardSlice {
            date: model.panel.date_of(t),
            day: t,
            cells: (0..=surface.max_duration().min(t))
                .map(|w| HazardCell {
                    duration: w,
                    value: surface.get(t, w),
                    defined: surface.is_defined(t, w),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    /// Median length of stay by admission day.
    Median,
    /// Probability of leaving by a given cause.
    Exitprob,
}

impl std::str::FromStr for IndicatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Self::Median),
            "exitprob" => Ok(Self::Exitprob),
            other => Err(format!("unknown indicator `{other}`, expected median or exitprob")),
        }
    }
}

impl IndicatorKind {
    pub fn default_cause(self) -> Cause {
        match self {
            Self::Median => Cause::All,
            Self::Exitprob => Cause::Death,
        }
    }

    /// The median is only meaningful for the all-cause hazard.
    pub fn check_cause(self, cause: Cause) -> Result<(), String> {
        match (self, cause) {
            (Self::Median, Cause::All) | (Self::Exitprob, _) => Ok(()),
            (Self::Median, c) => Err(format!("median stay uses the all-cause hazard, got cause `{c}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedValue {
    pub date: NaiveDate,
    pub day: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    #[serde(rename = "type")]
    pub kind: IndicatorKind,
    pub cause: Cause,
    /// Duration already spent in hospital (exit probabilities only).
    pub duration: usize,
    pub points: Vec<DatedValue>,
}

pub fn indicator_series(model: &FittedModel, kind: IndicatorKind, cause: Cause, duration: usize) -> IndicatorSeries {
    let raw = match kind {
        IndicatorKind::Median => median_stay_series(&model.hazards.all),
        IndicatorKind::Exitprob => {
            exit_probability_series(&model.hazards.recovery, &model.hazards.death, duration, cause)
        }
    };
    IndicatorSeries {
        kind,
        cause,
        duration,
        points: raw
            .into_iter()
            .map(|p| DatedValue {
                date: model.panel.date_of(p.day),
                day: p.day,
                value: p.value,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub date: NaiveDate,
    pub day: usize,
    pub g_hat: f64,
    /// Observed `n_out / n4`, absent on days without in-hospital deaths.
    pub raw: Option<f64>,
    pub floor_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioView {
    pub bandwidth_out: f64,
    pub bandwidth_in: f64,
    pub g_last: f64,
    pub points: Vec<RatioPoint>,
}

/// `None` when the panel carries no out-of-hospital deaths.
pub fn ratio_view(model: &FittedModel) -> Option<RatioView> {
    let curve = model.summary.ratio.as_ref()?;
    let raw = model.panel.raw_ratio()?;
    Some(RatioView {
        bandwidth_out: curve.bandwidth_out,
        bandwidth_in: curve.bandwidth_in,
        g_last: curve.last(),
        points: (0..curve.g_hat.len())
            .map(|d| RatioPoint {
                date: model.panel.date_of(d),
                day: d,
                g_hat: curve.g_hat[d],
                raw: raw[d],
                floor_applied: curve.floor_applied[d],
            })
            .collect(),
    })
}
