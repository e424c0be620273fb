//! Two-dimensional local-linear hazard estimation on the event grid.
//!
//! The estimate at `(t, w)` is the ratio of a local-linear smooth of
//! occurrences to a local-linear smooth of exposure, both using the same
//! correction weights `C = 1 - (x1, x2) A^-1 a` built from exposure moments.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::{Cause, DurationMatrix, EventGrid};
use crate::kernel::Kernel;
use crate::smoothing::{moment_fields, Bandwidths, LocalMoments, ProductWindow};

/// Smoothed exposure at or below this many person-days marks a cell undefined.
pub const EXPOSURE_EPS: f64 = 1e-8;

/// Estimated hazard `mu(t, w)` in exits per day.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardSurface {
    cause: Cause,
    bandwidths: Bandwidths,
    kernel: String,
    values: DurationMatrix,
    raw: DurationMatrix,
    mask: Vec<bool>,
}

impl HazardSurface {
    /// Builds a surface from raw (unclipped) values and a definedness mask.
    pub fn from_raw(
        cause: Cause,
        bandwidths: Bandwidths,
        kernel: impl Into<String>,
        raw: DurationMatrix,
        mask: Vec<bool>,
    ) -> Self {
        assert_eq!(mask.len(), raw.days() * (raw.max_duration() + 1));
        let cap = raw.max_duration() + 1;
        let mut values = raw.clone();
        for u in 0..raw.days() {
            for (w, x) in values.row_mut(u).iter_mut().enumerate() {
                *x = if mask[u * cap + w] { x.clamp(0.0, 1.0) } else { 0.0 };
            }
        }
        Self {
            cause,
            bandwidths,
            kernel: kernel.into(),
            values,
            raw,
            mask,
        }
    }

    /// Same value on every feasible cell.
    pub fn constant(days: usize, max_duration: usize, value: f64, cause: Cause) -> Self {
        let raw = DurationMatrix::from_fn(days, max_duration, |_, _| value);
        let mask = (0..days * (max_duration + 1))
            .map(|i| i % (max_duration + 1) <= i / (max_duration + 1))
            .collect();
        Self::from_raw(cause, Bandwidths { b1: 1.0, b2: 1.0 }, "none", raw, mask)
    }

    pub fn from_fn(
        days: usize,
        max_duration: usize,
        cause: Cause,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let raw = DurationMatrix::from_fn(days, max_duration, f);
        let mask = (0..days * (max_duration + 1))
            .map(|i| i % (max_duration + 1) <= i / (max_duration + 1))
            .collect();
        Self::from_raw(cause, Bandwidths { b1: 1.0, b2: 1.0 }, "none", raw, mask)
    }

    pub fn days(&self) -> usize {
        self.values.days()
    }

    pub fn max_duration(&self) -> usize {
        self.values.max_duration()
    }

    pub fn cause(&self) -> Cause {
        self.cause
    }

    pub fn bandwidths(&self) -> Bandwidths {
        self.bandwidths
    }

    pub fn kernel(&self) -> &str {
        &self.kernel
    }

    pub fn is_defined(&self, t: usize, w: usize) -> bool {
        self.values.is_cell(t, w) && self.mask[t * (self.max_duration() + 1) + w]
    }

    /// Clipped estimate, `None` on undefined or infeasible cells.
    pub fn get(&self, t: usize, w: usize) -> Option<f64> {
        self.is_defined(t, w).then(|| self.values.get(t, w))
    }

    /// Clipped estimate with undefined cells read as zero hazard. Durations
    /// past the tracked maximum use the last duration cell.
    #[inline]
    pub fn hazard_or_zero(&self, t: usize, w: usize) -> f64 {
        let w = w.min(self.max_duration());
        if w > t {
            return 0.0;
        }
        self.values.get(t, w)
    }

    /// Unclipped local-linear ratio (zero on undefined cells).
    pub fn raw(&self, t: usize, w: usize) -> f64 {
        if self.is_defined(t, w) {
            self.raw.get(t, w)
        } else {
            0.0
        }
    }

    pub fn values(&self) -> &DurationMatrix {
        &self.values
    }

    pub fn raw_values(&self) -> &DurationMatrix {
        &self.raw
    }

    pub fn defined_cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.cells().filter(|&(t, w, _)| self.is_defined(t, w))
    }

    pub fn defined_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Hazard along the cohort admitted on day `admit`, by duration.
    pub fn cohort_slice(&self, admit: usize) -> Vec<Option<f64>> {
        (0..=self.max_duration())
            .take_while(|w| admit + w < self.days())
            .map(|w| self.get(admit + w, w))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "w", "value", "defined"])?;
        for (t, d, v) in self.values.cells() {
            let defined = self.is_defined(t, d);
            w.write_record([
                t.to_string(),
                d.to_string(),
                format!("{v:e}"),
                defined.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn to_tensor(&self) -> HazardTensor {
        let cap = self.max_duration() + 1;
        HazardTensor {
            t: self.days(),
            w: self.max_duration(),
            cause: self.cause,
            b1: self.bandwidths.b1,
            b2: self.bandwidths.b2,
            kernel: self.kernel.clone(),
            values: self.values.to_rows(),
            raw: self.raw.to_rows(),
            mask: self.mask.chunks(cap).map(|c| c.to_vec()).collect(),
        }
    }

    pub fn from_tensor(t: HazardTensor) -> Result<Self, EstimationError> {
        let raw = DurationMatrix::from_rows(&t.raw)?;
        if raw.days() != t.t || raw.max_duration() != t.w || t.mask.len() != t.t {
            return Err(EstimationError::InvalidGrid("tensor shape mismatch".into()));
        }
        let mask: Vec<bool> = t.mask.concat();
        if mask.len() != t.t * (t.w + 1) {
            return Err(EstimationError::InvalidGrid("mask shape mismatch".into()));
        }
        Ok(Self::from_raw(
            t.cause,
            Bandwidths { b1: t.b1, b2: t.b2 },
            t.kernel,
            raw,
            mask,
        ))
    }
}

/// JSON export of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTensor {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub cause: Cause,
    pub b1: f64,
    pub b2: f64,
    pub kernel: String,
    pub values: Vec<Vec<f64>>,
    pub raw: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

/// Local-linear smooths of several occurrence matrices against one exposure
/// matrix. Returns per-occurrence raw ratios, a shared mask and the
/// local-linear denominators.
fn smooth_ratios(
    exposure: &DurationMatrix,
    occurrences: &[&DurationMatrix],
    window: &ProductWindow,
) -> (Vec<DurationMatrix>, Vec<bool>, Vec<f64>) {
    let days = exposure.days();
    let cap = exposure.max_duration();
    let width = cap + 1;
    let em = moment_fields(
        exposure,
        window,
        &[(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
    );
    let om: Vec<Vec<Vec<f64>>> = occurrences
        .par_iter()
        .map(|o| moment_fields(o, window, &[(0, 0), (1, 0), (0, 1)]))
        .collect();
    let mut out = vec![DurationMatrix::zeros(days, cap); occurrences.len()];
    let mut mask = vec![false; days * width];
    let mut den = vec![0.0; days * width];
    for t in 0..days {
        for w in 0..=cap.min(t) {
            let i = t * width + w;
            let m = LocalMoments {
                mass: em[0][i],
                a: [em[1][i], em[2][i]],
                a_mat: [[em[3][i], em[4][i]], [em[4][i], em[5][i]]],
                degenerate: false,
            };
            if m.mass <= 0.0 {
                continue;
            }
            let m = m.finish();
            let sol = m.solve().unwrap_or([0.0, 0.0]);
            let d = m.mass - (sol[0] * m.a[0] + sol[1] * m.a[1]);
            if !(d > EXPOSURE_EPS) {
                continue;
            }
            mask[i] = true;
            den[i] = d;
            for (k, f) in om.iter().enumerate() {
                let num = f[0][i] - (sol[0] * f[1][i] + sol[1] * f[2][i]);
                out[k].set(t, w, num / d);
            }
        }
    }
    (out, mask, den)
}

/// Local-linear hazard estimate for one cause.
pub fn estimate_hazard(
    grid: &EventGrid,
    cause: Cause,
    bandwidths: Bandwidths,
    kernel: &dyn Kernel,
) -> HazardSurface {
    let occ = grid.occurrences_for(cause);
    let window = ProductWindow::new(kernel, bandwidths);
    let (mut ratios, mask, _) = smooth_ratios(&grid.exposure, &[&occ], &window);
    HazardSurface::from_raw(cause, bandwidths, kernel.name(), ratios.remove(0), mask)
}

/// All-cause, recovery and death surfaces sharing one pass over the grid.
pub fn estimate_all_causes(
    grid: &EventGrid,
    bandwidths: Bandwidths,
    kernel: &dyn Kernel,
) -> CauseSurfaces {
    let all = grid.occurrences();
    let window = ProductWindow::new(kernel, bandwidths);
    let (mut r, mask, _) = smooth_ratios(
        &grid.exposure,
        &[&all, &grid.recoveries, &grid.deaths],
        &window,
    );
    let death = r.pop().expect("three surfaces");
    let recovery = r.pop().expect("three surfaces");
    let all = r.pop().expect("three surfaces");
    let mk = |c, m| HazardSurface::from_raw(c, bandwidths, kernel.name(), m, mask.clone());
    CauseSurfaces {
        all: mk(Cause::All, all),
        recovery: mk(Cause::Recovery, recovery),
        death: mk(Cause::Death, death),
    }
}

/// Smoothed ratios plus the local-linear denominators, used by
/// cross-validation for leave-one-out corrections.
pub(crate) fn estimate_with_denominators(
    exposure: &DurationMatrix,
    occurrences: &DurationMatrix,
    window: &ProductWindow,
) -> (DurationMatrix, Vec<bool>, Vec<f64>) {
    let (mut r, mask, den) = smooth_ratios(exposure, &[occurrences], window);
    (r.remove(0), mask, den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauseSurfaces {
    pub all: HazardSurface,
    pub recovery: HazardSurface,
    pub death: HazardSurface,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{StayOutcome, StayRecord};
    use crate::kernel::Epanechnikov;

    fn toy_grid(days: usize, cap: usize) -> EventGrid {
        let mut g = EventGrid::zeros(days, cap);
        for u in 0..days {
            for w in 0..=cap.min(u) {
                let e = 5.0 + ((u * 7 + w * 3) % 11) as f64;
                g.exposure.set(u, w, e);
                g.deaths.set(u, w, ((u + 2 * w) % 3) as f64);
                g.recoveries.set(u, w, ((u * w + 1) % 4) as f64);
            }
        }
        g
    }

    #[test]
    fn constant_hazard_is_reproduced() {
        let mut g = toy_grid(20, 8);
        let mu0 = 0.05;
        g.recoveries = g.exposure.map(|e| 0.6 * mu0 * e);
        g.deaths = g.exposure.map(|e| 0.4 * mu0 * e);
        for (b1, b2) in [(2.0, 2.0), (3.0, 5.0), (7.5, 4.0)] {
            let s = estimate_hazard(&g, Cause::All, Bandwidths::new(b1, b2).unwrap(), &Epanechnikov);
            assert!(s.defined_count() > 0);
            for (t, w, v) in s.defined_cells() {
                assert!((v - mu0).abs() < 1e-10, "({t},{w}) = {v}");
            }
        }
    }

    #[test]
    fn zero_exposure_masks_everything() {
        let g = EventGrid::zeros(10, 4);
        let s = estimate_hazard(&g, Cause::All, Bandwidths::new(2.0, 2.0).unwrap(), &Epanechnikov);
        assert_eq!(s.defined_count(), 0);
        assert_eq!(s.get(5, 2), None);
        assert_eq!(s.hazard_or_zero(5, 2), 0.0);
    }

    #[test]
    fn causes_add_up() {
        let g = toy_grid(25, 10);
        let b = Bandwidths::new(3.0, 4.0).unwrap();
        let s = estimate_all_causes(&g, b, &Epanechnikov);
        for (t, w, _) in s.all.defined_cells() {
            let sum = s.recovery.raw(t, w) + s.death.raw(t, w);
            assert!((sum - s.all.raw(t, w)).abs() < 1e-12);
        }
        let single = estimate_hazard(&g, Cause::Death, b, &Epanechnikov);
        assert_eq!(single.values(), s.death.values());
    }

    #[test]
    fn values_are_clipped_to_unit_interval() {
        let g = toy_grid(20, 6);
        let s = estimate_hazard(&g, Cause::All, Bandwidths::new(2.0, 2.0).unwrap(), &Epanechnikov);
        assert!(s.defined_cells().all(|(_, _, v)| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn tensor_round_trip() {
        let records: Vec<StayRecord> = (0..12)
            .map(|i| StayRecord {
                admit_day: i % 5,
                exit_day: i % 5 + i % 4,
                outcome: if i % 3 == 0 { StayOutcome::Death } else { StayOutcome::Recovery },
            })
            .collect();
        let g = EventGrid::from_records(&records, 10, 4).unwrap();
        let s = estimate_hazard(&g, Cause::Recovery, Bandwidths::new(2.0, 2.0).unwrap(), &Epanechnikov);
        let json = serde_json::to_string(&s.to_tensor()).unwrap();
        let back = HazardSurface::from_tensor(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,w,value,defined\n"));
        assert_eq!(text.lines().count(), 1 + s.values().cells().count());
    }

    #[test]
    fn cohort_slices_follow_the_diagonal() {
        let s = HazardSurface::from_fn(10, 4, Cause::All, |t, w| (t * 10 + w) as f64 / 1000.0);
        let slice = s.cohort_slice(3);
        assert_eq!(slice.len(), 5);
        assert_eq!(slice[2], Some(0.052));
        assert_eq!(s.cohort_slice(8).len(), 2);
    }
}
