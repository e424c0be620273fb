//! Synthetic pandemics with known hazards.
//!
//! Admissions follow a Poisson process with piecewise-constant daily rates.
//! Each admitted patient faces, on every day in hospital, the cause-specific
//! exit probabilities
//!
//! `mu_j(t, w) = scale * alpha(t) * alpha_j(w)`,   `alpha = alpha_1 + alpha_2`
//!
//! with `alpha_1(x) = B(x/T; 2, 2)/T` and
//! `alpha_2(x) = (0.6/T) (B(x/T; .5, .5) + B(x/T; 2, 4) + B(x/T; 4, 2))`,
//! `B(.; a, b)` being the Beta density. Densities are evaluated at day
//! centres `(x + 0.5)/T`, which keeps the arcsine terms finite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::{Cause, EventGrid, StayOutcome};
use crate::panel::DailyPanel;

pub const DEFAULT_SIM_DAYS: usize = 120;
/// Hazard scale at the default window length.
pub const DEFAULT_HAZARD_SCALE: f64 = 150.0;
pub const DEFAULT_OUTSIDE_RATIO: f64 = 0.5;

/// Beta(a, b) density on `(0, 1)`; zero outside the open interval.
pub fn beta_density(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return 0.0;
    }
    let log_beta = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - log_beta).exp()
}

/// Both hazard factors carry a `1/T`, so keeping daily exit probabilities
/// comparable across window lengths needs a scale growing like `T^2`.
pub fn default_hazard_scale(days: usize) -> f64 {
    let r = days as f64 / DEFAULT_SIM_DAYS as f64;
    DEFAULT_HAZARD_SCALE * r * r
}

fn centre(x: usize, days: usize) -> f64 {
    (x as f64 + 0.5) / days as f64
}

/// `alpha_1` at day `x` of a `days`-day window.
pub fn alpha_1(x: usize, days: usize) -> f64 {
    beta_density(centre(x, days), 2.0, 2.0) / days as f64
}

/// `alpha_2` at day `x` of a `days`-day window.
pub fn alpha_2(x: usize, days: usize) -> f64 {
    let z = centre(x, days);
    0.6 / days as f64 * (beta_density(z, 0.5, 0.5) + beta_density(z, 2.0, 4.0) + beta_density(z, 4.0, 2.0))
}

/// Calendar-time factor of the hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarEffect {
    /// `alpha_1(t) + alpha_2(t)`.
    Beta,
    /// Time-homogeneous hazards.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub days: usize,
    /// Expected admissions per day.
    pub arrival_intensity: Vec<f64>,
    pub hazard_scale: f64,
    pub calendar: CalendarEffect,
    /// When set, `alpha_1` drives recoveries and `alpha_2` deaths.
    pub swap_causes: bool,
    /// Expected out-of-hospital deaths per in-hospital death.
    pub outside_ratio: f64,
}

impl TrueModel {
    pub fn new(
        arrival_intensity: Vec<f64>,
        hazard_scale: f64,
        calendar: CalendarEffect,
    ) -> Result<Self, EstimationError> {
        let model = Self {
            days: arrival_intensity.len(),
            arrival_intensity,
            hazard_scale,
            calendar,
            swap_causes: false,
            outside_ratio: DEFAULT_OUTSIDE_RATIO,
        };
        model.validate()?;
        Ok(model)
    }

    /// Two epidemic waves over `days` days with `n` expected admissions.
    pub fn two_waves(days: usize, n: f64) -> Result<Self, EstimationError> {
        Self::new(two_wave_profile(days, n), default_hazard_scale(days), CalendarEffect::Beta)
    }

    /// Constant arrivals and time-homogeneous hazards whose calendar factor
    /// equals the average of the Beta one.
    pub fn stationary(days: usize, n: f64) -> Result<Self, EstimationError> {
        let mean = (0..days).map(|t| alpha_1(t, days) + alpha_2(t, days)).sum::<f64>() / days as f64;
        Self::new(vec![n / days as f64; days], default_hazard_scale(days), CalendarEffect::Constant(mean))
    }

    pub fn with_swapped_causes(mut self, swap: bool) -> Self {
        self.swap_causes = swap;
        self
    }

    pub fn with_outside_ratio(mut self, ratio: f64) -> Result<Self, EstimationError> {
        self.outside_ratio = ratio;
        self.validate()?;
        Ok(self)
    }

    /// Same shape, rescaled to `n` expected admissions.
    pub fn with_expected_admissions(&self, n: f64) -> Result<Self, EstimationError> {
        let total: f64 = self.arrival_intensity.iter().sum();
        if !(total > 0.0) {
            return Err(EstimationError::InvalidModel("arrival intensity is identically zero".into()));
        }
        let mut m = self.clone();
        m.arrival_intensity = self.arrival_intensity.iter().map(|r| r * n / total).collect();
        Ok(m)
    }

    pub fn expected_admissions(&self) -> f64 {
        self.arrival_intensity.iter().sum()
    }

    fn validate(&self) -> Result<(), EstimationError> {
        let bad = |m: String| Err(EstimationError::InvalidModel(m));
        if self.days < 2 {
            return bad(format!("need at least 2 days, got {}", self.days));
        }
        if self.arrival_intensity.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("arrival intensity must be finite and nonnegative".into());
        }
        if !(self.hazard_scale >= 0.0 && self.hazard_scale.is_finite()) {
            return bad(format!("hazard scale {} must be finite and nonnegative", self.hazard_scale));
        }
        if let CalendarEffect::Constant(c) = self.calendar {
            if !(c >= 0.0 && c.is_finite()) {
                return bad(format!("calendar factor {c} must be finite and nonnegative"));
            }
        }
        if !(self.outside_ratio >= 0.0 && self.outside_ratio.is_finite()) {
            return bad(format!("outside ratio {} must be finite and nonnegative", self.outside_ratio));
        }
        for t in 0..self.days {
            for w in 0..=t {
                let p = self.true_hazard(t, w, Cause::All);
                if p > 1.0 {
                    return bad(format!("daily exit probability {p:.4} exceeds one at day {t}, duration {w}"));
                }
            }
        }
        Ok(())
    }

    fn calendar_factor(&self, t: usize) -> f64 {
        match self.calendar {
            CalendarEffect::Beta => alpha_1(t, self.days) + alpha_2(t, self.days),
            CalendarEffect::Constant(c) => c,
        }
    }

    /// Daily exit probability on day `t` at duration `w`; zero outside the
    /// simulation window.
    pub fn true_hazard(&self, t: usize, w: usize, cause: Cause) -> f64 {
        if t >= self.days || w >= self.days {
            return 0.0;
        }
        let a1 = alpha_1(w, self.days);
        let a2 = alpha_2(w, self.days);
        let (death, recovery) = if self.swap_causes { (a2, a1) } else { (a1, a2) };
        let duration = match cause {
            Cause::All => a1 + a2,
            Cause::Death => death,
            Cause::Recovery => recovery,
        };
        self.hazard_scale * self.calendar_factor(t) * duration
    }
}

/// Two Gaussian-shaped waves on a small floor, summing to `n`.
pub fn two_wave_profile(days: usize, n: f64) -> Vec<f64> {
    let d = days as f64;
    let bump = |t: f64, c: f64, s: f64| (-(t - c).powi(2) / (2.0 * s * s)).exp();
    let raw: Vec<f64> = (0..days)
        .map(|t| {
            let t = t as f64;
            0.05 + bump(t, 0.25 * d, 0.1 * d) + 0.8 * bump(t, 0.67 * d, 0.12 * d)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r * n / total).collect()
}

/// Daily counts of a panel taken as piecewise-constant arrival rates.
pub fn arrival_intensity_from_panel(panel: &DailyPanel) -> Vec<f64> {
    panel.admissions().iter().map(|&a| a as f64).collect()
}

/// Generator for replicate `stream` under `seed`; streams are independent.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson<R: Rng>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

pub fn simulate_arrivals<R: Rng>(model: &TrueModel, rng: &mut R) -> Vec<u64> {
    model.arrival_intensity.iter().map(|&r| poisson(r, rng)).collect()
}

/// `count` patients admitted on `admit_day` who left on `exit_day` (or are
/// still in hospital at the end, for `Censored`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortOutcome {
    pub admit_day: usize,
    pub exit_day: usize,
    pub outcome: StayOutcome,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPandemic {
    pub records: Vec<CohortOutcome>,
    /// Marginal daily series: what an analyst actually sees.
    pub panel: DailyPanel,
}

impl SimulatedPandemic {
    /// Full-information grid counted from the linked records.
    pub fn event_grid(&self, max_duration: usize) -> EventGrid {
        let mut grid = EventGrid::zeros(self.panel.days(), max_duration);
        for r in &self.records {
            grid.add_stays(r.admit_day, r.exit_day, r.outcome, r.count as f64);
        }
        grid
    }
}

/// Follows every admission cohort day by day with binomial exits, then
/// draws out-of-hospital deaths as Poisson with mean `outside_ratio * n4`.
pub fn simulate_cohorts<R: Rng>(model: &TrueModel, rng: &mut R) -> SimulatedPandemic {
    let days = model.days;
    let n2 = simulate_arrivals(model, rng);
    let mut n3 = vec![0u64; days];
    let mut n4 = vec![0u64; days];
    let mut records = Vec::new();
    for (v, &admitted) in n2.iter().enumerate() {
        let mut remaining = admitted;
        for w in 0..days - v {
            if remaining == 0 {
                break;
            }
            let t = v + w;
            let all = model.true_hazard(t, w, Cause::All);
            let exits = binomial(remaining, all, rng);
            if exits > 0 {
                let p_death = model.true_hazard(t, w, Cause::Death) / all;
                let deaths = binomial(exits, p_death, rng);
                for (outcome, count) in [(StayOutcome::Death, deaths), (StayOutcome::Recovery, exits - deaths)] {
                    if count > 0 {
                        records.push(CohortOutcome {
                            admit_day: v,
                            exit_day: t,
                            outcome,
                            count,
                        });
                    }
                }
                n4[t] += deaths;
                n3[t] += exits - deaths;
                remaining -= exits;
            }
        }
        if remaining > 0 {
            records.push(CohortOutcome {
                admit_day: v,
                exit_day: days - 1,
                outcome: StayOutcome::Censored,
                count: remaining,
            });
        }
    }
    let n_out = n4.iter().map(|&d| poisson(model.outside_ratio * d as f64, rng)).collect();
    let start = chrono::NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date");
    let panel = DailyPanel::new(start, None, n2, n3, n4, Some(n_out)).expect("simulated counts are consistent");
    SimulatedPandemic { records, panel }
}
