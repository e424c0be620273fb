//! Death forecasting under expert indicators.
//!
//! `C1` scales the admission rate at the end of the horizon relative to its
//! most recent estimate and `C2` does the same for the outside/inside death
//! ratio; both move linearly in between, and `C = 1` means persistence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::hazard::HazardSurface;
use crate::kernel::Kernel;
use crate::panel::DailyPanel;
use crate::registry::Registry;
use crate::smoothing::local_linear_regress;

/// Smoothed in-hospital deaths below this floor (deaths/day) are raised to it
/// before dividing.
pub const RATIO_FLOOR: f64 = 0.5;

/// Smoothed ratio of out-of-hospital to in-hospital deaths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub g_hat: Vec<f64>,
    pub smoothed_out: Vec<f64>,
    pub smoothed_in: Vec<f64>,
    pub bandwidth_out: f64,
    pub bandwidth_in: f64,
    /// Days where the denominator floor was applied.
    pub floor_applied: Vec<bool>,
}

impl RatioCurve {
    /// Estimate on the last day.
    pub fn last(&self) -> f64 {
        *self.g_hat.last().expect("non-empty ratio curve")
    }
}

/// Numerator and denominator are smoothed separately and then divided.
pub fn estimate_ratio(
    panel: &DailyPanel,
    bandwidth_out: f64,
    bandwidth_in: f64,
    kernel: &dyn Kernel,
) -> Result<RatioCurve, EstimationError> {
    let out = panel
        .deaths_out()
        .ok_or(EstimationError::MissingOutOfHospitalDeaths)?;
    let days: Vec<f64> = (0..panel.days()).map(|d| d as f64).collect();
    let as_f64 = |s: &[u64]| s.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let num = local_linear_regress(&days, &as_f64(out), bandwidth_out, &days, kernel)?;
    let den = local_linear_regress(&days, &as_f64(panel.deaths_in()), bandwidth_in, &days, kernel)?;
    let mut g_hat = Vec::with_capacity(days.len());
    let mut floor_applied = Vec::with_capacity(days.len());
    for (n, d) in num.values.iter().zip(&den.values) {
        floor_applied.push(*d < RATIO_FLOOR);
        g_hat.push(n.max(0.0) / d.max(RATIO_FLOOR));
    }
    Ok(RatioCurve {
        g_hat,
        smoothed_out: num.values,
        smoothed_in: den.values,
        bandwidth_out,
        bandwidth_in,
        floor_applied,
    })
}

/// Linear path from `last` at the cutoff to `c * last` at `s = h`.
pub fn linear_ramp(last: f64, c: f64, horizon: usize, s: usize) -> f64 {
    last * (1.0 + (c - 1.0) * s as f64 / horizon as f64)
}

/// `g~(T + s) = g^(T) (1 + (C2 - 1) s / h)` for `0 < s <= h`.
pub fn extrapolate_ratio(g_last: f64, c2: f64, horizon: usize, s: usize) -> f64 {
    debug_assert!(s >= 1 && s <= horizon);
    linear_ramp(g_last, c2, horizon, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastScenario {
    /// Last observed day (index into the panel).
    pub cutoff: usize,
    pub horizon: usize,
    pub c1: f64,
    pub c2: f64,
}

impl ForecastScenario {
    pub fn new(cutoff: usize, horizon: usize, c1: f64, c2: f64) -> Result<Self, EstimationError> {
        if horizon < 1 {
            return Err(EstimationError::InvalidScenario("horizon must be >= 1".into()));
        }
        if !(c1 > 0.0 && c1.is_finite()) || !(c2 > 0.0 && c2.is_finite()) {
            return Err(EstimationError::InvalidScenario(format!(
                "indicators must be positive, got c1 = {c1}, c2 = {c2}"
            )));
        }
        Ok(Self {
            cutoff,
            horizon,
            c1,
            c2,
        })
    }
}

/// Produces daily admissions for `(T, T + h]`.
pub trait AdmissionsForecaster: Send + Sync {
    fn name(&self) -> &'static str;

    fn forecast(
        &self,
        panel: &DailyPanel,
        scenario: &ForecastScenario,
        kernel: &dyn Kernel,
    ) -> Result<Vec<f64>, EstimationError>;
}

fn ramp_path(level: f64, scenario: &ForecastScenario) -> Vec<f64> {
    (1..=scenario.horizon)
        .map(|s| linear_ramp(level, scenario.c1, scenario.horizon, s).max(0.0))
        .collect()
}

/// Local-linear admission rate at the cutoff, ramped by `C1`.
#[derive(Debug, Clone, Copy)]
pub struct PersistenceAdmissions {
    pub bandwidth: f64,
}

impl Default for PersistenceAdmissions {
    fn default() -> Self {
        Self { bandwidth: 7.0 }
    }
}

impl PersistenceAdmissions {
    pub fn current_rate(
        &self,
        panel: &DailyPanel,
        cutoff: usize,
        kernel: &dyn Kernel,
    ) -> Result<f64, EstimationError> {
        let n = cutoff + 1;
        let x: Vec<f64> = (0..n).map(|d| d as f64).collect();
        let y: Vec<f64> = panel.admissions()[..n].iter().map(|&a| a as f64).collect();
        let fit = local_linear_regress(&x, &y, self.bandwidth, &[cutoff as f64], kernel)?;
        Ok(fit.values[0].max(0.0))
    }
}

impl AdmissionsForecaster for PersistenceAdmissions {
    fn name(&self) -> &'static str {
        "persistence"
    }

    fn forecast(
        &self,
        panel: &DailyPanel,
        scenario: &ForecastScenario,
        kernel: &dyn Kernel,
    ) -> Result<Vec<f64>, EstimationError> {
        let level = self.current_rate(panel, scenario.cutoff, kernel)?;
        Ok(ramp_path(level, scenario))
    }
}

/// Mean of the last seven observed days, ramped by `C1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrailingMeanAdmissions;

impl AdmissionsForecaster for TrailingMeanAdmissions {
    fn name(&self) -> &'static str {
        "trailing-mean"
    }

    fn forecast(
        &self,
        panel: &DailyPanel,
        scenario: &ForecastScenario,
        _kernel: &dyn Kernel,
    ) -> Result<Vec<f64>, EstimationError> {
        let end = scenario.cutoff + 1;
        let start = end.saturating_sub(7);
        let tail = &panel.admissions()[start..end];
        let level = tail.iter().sum::<u64>() as f64 / tail.len() as f64;
        Ok(ramp_path(level, scenario))
    }
}

/// Externally supplied path, returned verbatim.
#[derive(Debug, Clone)]
pub struct ExternalAdmissions(pub Vec<f64>);

impl AdmissionsForecaster for ExternalAdmissions {
    fn name(&self) -> &'static str {
        "external"
    }

    fn forecast(
        &self,
        _panel: &DailyPanel,
        scenario: &ForecastScenario,
        _kernel: &dyn Kernel,
    ) -> Result<Vec<f64>, EstimationError> {
        if self.0.len() != scenario.horizon {
            return Err(EstimationError::InvalidScenario(format!(
                "admissions override has {} days, horizon is {}",
                self.0.len(),
                scenario.horizon
            )));
        }
        if self.0.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(EstimationError::InvalidScenario(
                "admissions override must be finite and nonnegative".into(),
            ));
        }
        Ok(self.0.clone())
    }
}

/// Built-in admission forecasters; `persistence` is the default.
pub fn admissions_registry() -> Registry<dyn AdmissionsForecaster> {
    let mut reg: Registry<dyn AdmissionsForecaster> = Registry::new("admissions forecaster");
    reg.register("persistence", || Box::new(PersistenceAdmissions::default()))
        .register("trailing-mean", || Box::new(TrailingMeanAdmissions))
        .set_default("persistence");
    reg
}

/// Projects in-hospital deaths over `(T, T + h]` with hazards frozen at their
/// values on the cutoff day.
///
/// `standing[d]` is the end-of-day population on the cutoff with duration
/// `d` (pooled at the cap); `admissions[s - 1]` enter on day `T + s`.
pub fn forecast_in_hospital_deaths(
    all_cause: &HazardSurface,
    deaths: &HazardSurface,
    cutoff: usize,
    standing: &[f64],
    admissions: &[f64],
) -> Vec<f64> {
    let cap = all_cause.max_duration();
    let frozen_all: Vec<f64> = (0..=cap).map(|w| all_cause.hazard_or_zero(cutoff, w)).collect();
    let frozen_death: Vec<f64> = (0..=cap).map(|w| deaths.hazard_or_zero(cutoff, w)).collect();
    // population at the start of day T + 1, by duration
    let mut at_risk = vec![0.0; cap + 1];
    for (d, &n) in standing.iter().enumerate() {
        at_risk[(d + 1).min(cap)] += n;
    }
    let mut out = Vec::with_capacity(admissions.len());
    for (s, &adm) in admissions.iter().enumerate() {
        if s > 0 {
            let mut next = vec![0.0; cap + 1];
            for (d, &n) in at_risk.iter().enumerate() {
                next[(d + 1).min(cap)] += n * (1.0 - frozen_all[d]);
            }
            at_risk = next;
        }
        at_risk[0] = adm;
        let deaths_today: f64 = at_risk.iter().zip(&frozen_death).map(|(n, m)| n * m).sum();
        out.push(deaths_today);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub admissions: Vec<f64>,
    pub deaths_in: Vec<f64>,
    pub g_tilde: Vec<f64>,
    pub deaths_out: Vec<f64>,
    pub deaths_total: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastProvenance {
    pub model_id: Option<String>,
    pub admissions_model: String,
    pub g_last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub scenario: ForecastScenario,
    pub series: ForecastSeries,
    pub provenance: ForecastProvenance,
}

impl ForecastResult {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "admissions", "deaths_in", "g_tilde", "deaths_out", "deaths_total"])?;
        let s = &self.series;
        for i in 0..s.admissions.len() {
            w.write_record([
                (self.scenario.cutoff + 1 + i).to_string(),
                s.admissions[i].to_string(),
                s.deaths_in[i].to_string(),
                s.g_tilde[i].to_string(),
                s.deaths_out[i].to_string(),
                s.deaths_total[i].to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Adds out-of-hospital deaths via the extrapolated ratio.
pub fn forecast_total_deaths(
    admissions: Vec<f64>,
    deaths_in: Vec<f64>,
    g_last: f64,
    scenario: ForecastScenario,
    provenance: ForecastProvenance,
) -> ForecastResult {
    let h = scenario.horizon;
    let g_tilde: Vec<f64> = (1..=h)
        .map(|s| extrapolate_ratio(g_last, scenario.c2, h, s))
        .collect();
    let deaths_out: Vec<f64> = deaths_in.iter().zip(&g_tilde).map(|(d, g)| d * g).collect();
    let deaths_total: Vec<f64> = deaths_in.iter().zip(&g_tilde).map(|(d, g)| d * (1.0 + g)).collect();
    ForecastResult {
        scenario,
        series: ForecastSeries {
            admissions,
            deaths_in,
            g_tilde,
            deaths_out,
            deaths_total,
        },
        provenance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BacktestObjective {
    /// Sum of squared daily errors.
    #[default]
    Daily,
    /// Sum of squared errors of the running totals.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2Search {
    pub c2_star: f64,
    pub c2_grid: Vec<f64>,
    pub sse_curve: Vec<f64>,
}

/// `0.25, 0.30, ..., 4.00`.
pub fn default_c2_grid() -> Vec<f64> {
    (0..76).map(|i| (25 + 5 * i) as f64 / 100.0).collect()
}

/// Grid search for the `C2` whose total-death path best matches the held-out
/// observations. The first minimiser wins.
pub fn optimize_c2(
    deaths_in: &[f64],
    g_last: f64,
    observed_totals: &[f64],
    grid: &[f64],
    objective: BacktestObjective,
) -> Result<C2Search, EstimationError> {
    if grid.is_empty() {
        return Err(EstimationError::EmptyCandidates);
    }
    if deaths_in.len() != observed_totals.len() || deaths_in.is_empty() {
        return Err(EstimationError::InvalidInput(format!(
            "forecast has {} days but {} observations were supplied",
            deaths_in.len(),
            observed_totals.len()
        )));
    }
    let h = deaths_in.len();
    let sse_curve: Vec<f64> = grid
        .iter()
        .map(|&c2| {
            let mut sse = 0.0;
            let (mut cum_f, mut cum_o) = (0.0, 0.0);
            for s in 1..=h {
                let total = deaths_in[s - 1] * (1.0 + extrapolate_ratio(g_last, c2, h, s));
                let obs = observed_totals[s - 1];
                let err = match objective {
                    BacktestObjective::Daily => total - obs,
                    BacktestObjective::Cumulative => {
                        cum_f += total;
                        cum_o += obs;
                        cum_f - cum_o
                    }
                };
                sse += err * err;
            }
            sse
        })
        .collect();
    let best = sse_curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    Ok(C2Search {
        c2_star: grid[best],
        c2_grid: grid.to_vec(),
        sse_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cause;
    use crate::kernel::Epanechnikov;
    use chrono::NaiveDate;

    fn panel(n2: Vec<u64>, n4: Vec<u64>, out: Vec<u64>) -> DailyPanel {
        let n = n2.len();
        DailyPanel::new(
            NaiveDate::from_ymd_opt(2020, 9, 1).unwrap(),
            None,
            n2,
            vec![0; n],
            n4,
            Some(out),
        )
        .unwrap()
    }

    #[test]
    fn ratio_of_equal_series_is_one() {
        let n4: Vec<u64> = (0..40).map(|d| 20 + (d % 7) as u64).collect();
        let p = panel(vec![100; 40], n4.clone(), n4);
        let r = estimate_ratio(&p, 7.0, 7.0, &Epanechnikov).unwrap();
        assert!(r.g_hat.iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert!(r.floor_applied.iter().all(|f| !f));
    }

    #[test]
    fn ratio_of_zero_numerator_is_zero() {
        let p = panel(vec![100; 30], vec![10; 30], vec![0; 30]);
        let r = estimate_ratio(&p, 5.0, 5.0, &Epanechnikov).unwrap();
        assert!(r.g_hat.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_needs_outside_deaths() {
        let p = DailyPanel::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), None, vec![1, 1], vec![0, 0], vec![0, 1], None)
            .unwrap();
        assert_eq!(
            estimate_ratio(&p, 3.0, 3.0, &Epanechnikov).unwrap_err().to_string(),
            "ratio requires out-of-hospital deaths"
        );
    }

    #[test]
    fn ratio_extrapolation() {
        for s in 1..=10 {
            assert_eq!(extrapolate_ratio(0.7, 1.0, 10, s), 0.7);
        }
        assert!((extrapolate_ratio(0.5, 3.0, 10, 10) - 1.5).abs() < 1e-15);
        assert!((extrapolate_ratio(0.5, 3.0, 10, 5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn persistence_admissions() {
        let p = panel(vec![40; 30], vec![0; 30], vec![0; 30]);
        let sc = ForecastScenario::new(29, 10, 1.0, 1.0).unwrap();
        let path = PersistenceAdmissions::default().forecast(&p, &sc, &Epanechnikov).unwrap();
        assert!(path.iter().all(|a| (a - 40.0).abs() < 1e-9));
        let sc = ForecastScenario::new(29, 10, 1.542, 1.0).unwrap();
        let path = PersistenceAdmissions::default().forecast(&p, &sc, &Epanechnikov).unwrap();
        assert!((path[9] - 1.542 * 40.0).abs() < 1e-9);
        let ext = ExternalAdmissions(vec![1.0, 2.0, 3.0]);
        let sc = ForecastScenario::new(29, 3, 2.0, 1.0).unwrap();
        assert_eq!(ext.forecast(&p, &sc, &Epanechnikov).unwrap(), vec![1.0, 2.0, 3.0]);
        let sc = ForecastScenario::new(29, 4, 2.0, 1.0).unwrap();
        assert!(ext.forecast(&p, &sc, &Epanechnikov).is_err());
        assert_eq!(admissions_registry().create_default().name(), "persistence");
    }

    #[test]
    fn scenario_validation() {
        assert!(ForecastScenario::new(5, 0, 1.0, 1.0).is_err());
        assert!(ForecastScenario::new(5, 3, 0.0, 1.0).is_err());
        assert!(ForecastScenario::new(5, 3, 1.0, -2.0).is_err());
    }

    #[test]
    fn standing_cohort_decays_geometrically() {
        let mu = HazardSurface::constant(10, 5, 0.1, Cause::All);
        let mut standing = vec![0.0; 6];
        standing[2] = 100.0;
        let deaths = forecast_in_hospital_deaths(&mu, &mu, 9, &standing, &[0.0; 4]);
        let expect = [10.0, 9.0, 8.1, 7.29];
        for (d, e) in deaths.iter().zip(expect) {
            assert!((d - e).abs() < 1e-12, "{deaths:?}");
        }
        let zero = HazardSurface::constant(10, 5, 0.0, Cause::Death);
        let none = forecast_in_hospital_deaths(&mu, &zero, 9, &standing, &[5.0; 4]);
        assert!(none.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn totals_follow_the_ratio() {
        let sc = ForecastScenario::new(9, 5, 1.0, 2.732).unwrap();
        let prov = ForecastProvenance {
            model_id: None,
            admissions_model: "test".into(),
            g_last: 1.0,
        };
        let r = forecast_total_deaths(vec![0.0; 5], vec![4.0; 5], 1.0, sc, prov.clone());
        assert!((r.series.deaths_out[4] - 2.732 * 4.0).abs() < 1e-12);
        for i in 0..5 {
            let s = &r.series;
            assert_eq!(s.deaths_total[i], s.deaths_in[i] * (1.0 + s.g_tilde[i]));
        }
        let r = forecast_total_deaths(vec![0.0; 5], vec![4.0; 5], 0.0, sc, prov);
        assert_eq!(r.series.deaths_total, r.series.deaths_in);
    }

    #[test]
    fn c2_grid_search() {
        let grid = default_c2_grid();
        assert_eq!(grid.len(), 76);
        assert_eq!(grid[0], 0.25);
        assert_eq!(*grid.last().unwrap(), 4.0);
        let deaths_in = vec![10.0; 14];
        // observed equals the C2 = 1 forecast
        let obs: Vec<f64> = deaths_in.iter().map(|d| d * 1.6).collect();
        let res = optimize_c2(&deaths_in, 0.6, &obs, &grid, BacktestObjective::Daily).unwrap();
        assert_eq!(res.c2_star, 1.0);
        assert_eq!(res.sse_curve.len(), 76);
        assert!(optimize_c2(&deaths_in, 0.6, &obs, &[], BacktestObjective::Daily).is_err());
    }

    #[test]
    fn c2_search_recovers_its_generator() {
        let grid = default_c2_grid();
        let deaths_in: Vec<f64> = (0..21).map(|i| 30.0 - i as f64).collect();
        for &c in &[0.5, 1.35, 2.0, 3.85] {
            let obs: Vec<f64> = (1..=21)
                .map(|s| deaths_in[s - 1] * (1.0 + extrapolate_ratio(0.8, c, 21, s)))
                .collect();
            for objective in [BacktestObjective::Daily, BacktestObjective::Cumulative] {
                let res = optimize_c2(&deaths_in, 0.8, &obs, &grid, objective).unwrap();
                assert_eq!(res.c2_star, c);
            }
        }
    }
}
