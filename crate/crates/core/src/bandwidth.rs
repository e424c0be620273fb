//! Least-squares cross-validation for the bandwidth pair `(b1, b2)`.
//!
//! The score approximates the exposure-weighted integrated squared error up
//! to a constant:
//!
//! `Q(b) = sum mu_b(t, w)^2 E(t, w) - 2 sum mu_b^(-cell)(t, w) O(t, w)`
//!
//! where the leave-one-out estimate drops the cell's own occurrences from the
//! numerator. At its own cell the correction weight is exactly one, so the
//! removal costs a single subtraction.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::EventGrid;
use crate::hazard::estimate_with_denominators;
use crate::kernel::Kernel;
use crate::smoothing::{Bandwidths, ProductWindow};

/// Bandwidth values (days) spanned by the default candidate grid.
pub const DEFAULT_LADDER: [f64; 7] = [2.0, 3.0, 5.0, 7.0, 10.0, 14.0, 21.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvWeighting {
    /// Squared error weighted by exposure.
    #[default]
    Exposure,
    /// Unweighted squared error over exposed cells, with raw
    /// occurrence/exposure ratios in the cross term.
    Unweighted,
}

/// Full Cartesian product of `DEFAULT_LADDER` with itself.
pub fn default_candidates() -> Vec<Bandwidths> {
    DEFAULT_LADDER
        .iter()
        .flat_map(|&b1| DEFAULT_LADDER.iter().map(move |&b2| Bandwidths { b1, b2 }))
        .collect()
}

/// Cross-validation score; `+inf` when every cell is undefined.
pub fn cv_score(
    grid: &EventGrid,
    bandwidths: Bandwidths,
    kernel: &dyn Kernel,
    weighting: CvWeighting,
) -> f64 {
    let occ = grid.occurrences();
    let window = ProductWindow::new(kernel, bandwidths);
    let (raw, mask, den) = estimate_with_denominators(&grid.exposure, &occ, &window);
    let centre = window.centre();
    let cap = grid.max_duration() + 1;
    let mut fit = 0.0;
    let mut cross = 0.0;
    let mut any = false;
    for (t, w, r) in raw.cells() {
        let i = t * cap + w;
        if !mask[i] {
            continue;
        }
        any = true;
        let e = grid.exposure.get(t, w);
        let o = occ.get(t, w);
        let mu = r.clamp(0.0, 1.0);
        let loo = ((r * den[i] - centre * o) / den[i]).clamp(0.0, 1.0);
        match weighting {
            CvWeighting::Exposure => {
                fit += mu * mu * e;
                cross += loo * o;
            }
            CvWeighting::Unweighted => {
                if e > 0.0 {
                    fit += mu * mu;
                    cross += loo * o / e;
                }
            }
        }
    }
    if any {
        fit - 2.0 * cross
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub candidates: Vec<Bandwidths>,
    pub scores: Vec<f64>,
    pub chosen: Bandwidths,
}

impl CvResult {
    /// `b1,b2,score` trace.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["b1", "b2", "score"])?;
        for (b, s) in self.candidates.iter().zip(&self.scores) {
            w.write_record([b.b1.to_string(), b.b2.to_string(), format!("{s:e}")])?;
        }
        w.flush()
    }
}

/// Scores every candidate and keeps the minimiser; ties go to the larger
/// `b1 * b2`.
pub fn select_bandwidths(
    grid: &EventGrid,
    candidates: &[Bandwidths],
    kernel: &dyn Kernel,
    weighting: CvWeighting,
) -> Result<CvResult, EstimationError> {
    if candidates.is_empty() {
        return Err(EstimationError::EmptyCandidates);
    }
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&b| cv_score(grid, b, kernel, weighting))
        .collect();
    let best = scores
        .iter()
        .zip(candidates)
        .filter(|(s, _)| s.is_finite())
        .min_by(|(sa, ba), (sb, bb)| sa.total_cmp(sb).then(bb.area().total_cmp(&ba.area())))
        .map(|(_, b)| *b)
        .ok_or(EstimationError::NoUsableBandwidth)?;
    Ok(CvResult {
        candidates: candidates.to_vec(),
        scores,
        chosen: best,
    })
}

/// How a fit obtains its bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandwidthChoice {
    Fixed(Bandwidths),
    CrossValidated {
        candidates: Vec<Bandwidths>,
        weighting: CvWeighting,
    },
}

impl BandwidthChoice {
    pub fn auto() -> Self {
        Self::CrossValidated {
            candidates: default_candidates(),
            weighting: CvWeighting::Exposure,
        }
    }

    /// Parses `auto` or `b1,b2`.
    pub fn parse(s: &str) -> Result<Self, EstimationError> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Self::auto());
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || EstimationError::InvalidBandwidths(format!("expected `auto` or `b1,b2`, got `{s}`"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let b1: f64 = parts[0].parse().map_err(|_| bad())?;
        let b2: f64 = parts[1].parse().map_err(|_| bad())?;
        Ok(Self::Fixed(Bandwidths::new(b1, b2)?))
    }

    /// Resolves the choice on `grid`; the CV trace is returned when one was
    /// computed.
    pub fn resolve(
        &self,
        grid: &EventGrid,
        kernel: &dyn Kernel,
    ) -> Result<(Bandwidths, Option<CvResult>), EstimationError> {
        match self {
            Self::Fixed(b) => Ok((*b, None)),
            Self::CrossValidated {
                candidates,
                weighting,
            } => {
                let cv = select_bandwidths(grid, candidates, kernel, *weighting)?;
                Ok((cv.chosen, Some(cv)))
            }
        }
    }
}
