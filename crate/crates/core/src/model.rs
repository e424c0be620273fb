//! End-to-end fit of a daily panel and the model directory format.
//!
//! A fit resolves bandwidths on the constant-hazard imputation, runs the
//! missing-link iteration, splits the final imputation by cause, and keeps
//! everything a forecast needs: the cutoff-day standing population and the
//! smoothed death ratio.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthChoice, CvResult};
use crate::error::EstimationError;
use crate::forecast::{
    estimate_ratio, forecast_in_hospital_deaths, forecast_total_deaths, optimize_c2,
    AdmissionsForecaster, BacktestObjective, C2Search, ForecastProvenance, ForecastResult,
    ForecastScenario, RatioCurve,
};
use crate::grid::Cause;
use crate::hazard::{CauseSurfaces, HazardSurface, HazardTensor};
use crate::kernel::{kernel_registry, Kernel};
use crate::missing_link::{
    fit_missing_link, impute_standing, initial_imputation, split_causes, FitDiagnostics,
    ImputedGrid, IterationOptions,
};
use crate::panel::{DailyPanel, TimeGridConvention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Duration cap; `None` means `min(60, T - 1)`.
    pub max_duration: Option<usize>,
    pub bandwidths: BandwidthChoice,
    pub kernel: String,
    pub iteration: IterationOptions,
    /// Bandwidth (days) for both smoothers of the death ratio.
    pub ratio_bandwidth: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_duration: None,
            bandwidths: BandwidthChoice::auto(),
            kernel: "epanechnikov".into(),
            iteration: IterationOptions::default(),
            ratio_bandwidth: 7.0,
        }
    }
}

/// Everything the model directory stores besides the panel and surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub config: FitConfig,
    pub days: usize,
    pub max_duration: usize,
    pub diagnostics: FitDiagnostics,
    /// End-of-day population on the last day by duration.
    pub standing: Vec<f64>,
    pub ratio: Option<RatioCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub panel: DailyPanel,
    pub summary: ModelSummary,
    pub hazards: CauseSurfaces,
    pub imputed: ImputedGrid,
    pub cv: Option<CvResult>,
}

pub fn fit_model(panel: &DailyPanel, config: &FitConfig) -> Result<FittedModel, EstimationError> {
    let kernel = kernel_registry().create(&config.kernel)?;
    let convention = match config.max_duration {
        Some(w) => TimeGridConvention::new(w, panel.days())?,
        None => TimeGridConvention::for_days(panel.days())?,
    };
    let cap = convention.max_duration;
    let start = initial_imputation(panel, cap)?;
    let (bandwidths, cv) = config.bandwidths.resolve(&start, kernel.as_ref())?;
    let fit = fit_missing_link(panel, cap, bandwidths, kernel.as_ref(), config.iteration)?;
    let hazards = split_causes(panel, &fit, kernel.as_ref());
    let standing = impute_standing(panel, &hazards.all, panel.days() - 1)?;
    let ratio = match panel.deaths_out() {
        Some(_) => Some(estimate_ratio(
            panel,
            config.ratio_bandwidth,
            config.ratio_bandwidth,
            kernel.as_ref(),
        )?),
        None => None,
    };
    Ok(FittedModel {
        panel: panel.clone(),
        summary: ModelSummary {
            config: config.clone(),
            days: panel.days(),
            max_duration: cap,
            diagnostics: fit.diagnostics,
            standing,
            ratio,
        },
        hazards,
        imputed: fit.grid,
        cv,
    })
}

impl FittedModel {
    /// Last observed day.
    pub fn cutoff(&self) -> usize {
        self.panel.days() - 1
    }

    pub fn kernel(&self) -> Result<Box<dyn Kernel>, EstimationError> {
        kernel_registry().create(&self.summary.config.kernel)
    }

    pub fn surface(&self, cause: Cause) -> &HazardSurface {
        match cause {
            Cause::All => &self.hazards.all,
            Cause::Recovery => &self.hazards.recovery,
            Cause::Death => &self.hazards.death,
        }
    }

    /// Ratio on the cutoff day, or zero without out-of-hospital deaths.
    pub fn ratio_last(&self) -> f64 {
        self.summary.ratio.as_ref().map_or(0.0, RatioCurve::last)
    }

    pub fn forecast(
        &self,
        horizon: usize,
        c1: f64,
        c2: f64,
        admissions: &dyn AdmissionsForecaster,
        model_id: Option<String>,
    ) -> Result<ForecastResult, EstimationError> {
        let scenario = ForecastScenario::new(self.cutoff(), horizon, c1, c2)?;
        let kernel = self.kernel()?;
        let adm = admissions.forecast(&self.panel, &scenario, kernel.as_ref())?;
        let deaths_in = forecast_in_hospital_deaths(
            &self.hazards.all,
            &self.hazards.death,
            self.cutoff(),
            &self.summary.standing,
            &adm,
        );
        let g_last = self.ratio_last();
        Ok(forecast_total_deaths(
            adm,
            deaths_in,
            g_last,
            scenario,
            ForecastProvenance {
                model_id,
                admissions_model: admissions.name().to_string(),
                g_last,
            },
        ))
    }

    /// Writes the model directory: `model.json`, `panel.csv`, hazard
    /// surfaces as CSV and JSON, the imputed grid, diagnostics and the CV
    /// trace when one was computed.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.json"), pretty(&self.summary))?;
        fs::write(dir.join("panel.csv"), self.panel.to_csv_string())?;
        for s in [&self.hazards.all, &self.hazards.recovery, &self.hazards.death] {
            let stem = format!("hazard_{}", s.cause());
            s.write_csv(fs::File::create(dir.join(format!("{stem}.csv")))?)?;
            fs::write(dir.join(format!("{stem}.json")), pretty(&s.to_tensor()))?;
        }
        fs::write(dir.join("imputed_grid.json"), pretty(&self.imputed))?;
        fs::write(dir.join("diagnostics.json"), pretty(&self.summary.diagnostics))?;
        if let Some(cv) = &self.cv {
            cv.write_csv(fs::File::create(dir.join("cv_trace.csv"))?)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, EstimationError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name))
                .map_err(|e| EstimationError::InvalidInput(format!("{}: {e}", dir.join(name).display())))
        };
        let parse_err = |name: &str, e: serde_json::Error| EstimationError::InvalidInput(format!("{name}: {e}"));
        let summary: ModelSummary =
            serde_json::from_str(&read("model.json")?).map_err(|e| parse_err("model.json", e))?;
        let panel = DailyPanel::ingest_csv(read("panel.csv")?.as_bytes())?;
        let surface = |cause: &str| -> Result<HazardSurface, EstimationError> {
            let name = format!("hazard_{cause}.json");
            let t: HazardTensor = serde_json::from_str(&read(&name)?).map_err(|e| parse_err(&name, e))?;
            HazardSurface::from_tensor(t)
        };
        let hazards = CauseSurfaces {
            all: surface("all")?,
            recovery: surface("recovery")?,
            death: surface("death")?,
        };
        let imputed: ImputedGrid =
            serde_json::from_str(&read("imputed_grid.json")?).map_err(|e| parse_err("imputed_grid.json", e))?;
        if panel.days() != summary.days || hazards.all.days() != summary.days {
            return Err(EstimationError::InvalidInput(
                "model directory is inconsistent: panel and surfaces disagree on the number of days".into(),
            ));
        }
        Ok(Self {
            panel,
            summary,
            hazards,
            imputed,
            cv: None,
        })
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("exports serialise")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub cutoff: usize,
    pub horizon: usize,
    pub search: C2Search,
    pub observed_totals: Vec<f64>,
    /// Forecast at the optimal `C2`.
    pub best: ForecastResult,
}

/// Fits on days `0..=cutoff`, forecasts `horizon` days with `C1 = 1`, and
/// chooses `C2` against the held-out total deaths.
pub fn backtest(
    panel: &DailyPanel,
    cutoff: usize,
    horizon: usize,
    c2_grid: &[f64],
    config: &FitConfig,
    admissions: &dyn AdmissionsForecaster,
    objective: BacktestObjective,
) -> Result<BacktestResult, EstimationError> {
    let out = panel
        .deaths_out()
        .ok_or(EstimationError::MissingOutOfHospitalDeaths)?;
    if horizon < 1 || cutoff + horizon >= panel.days() {
        return Err(EstimationError::InvalidScenario(format!(
            "cutoff {cutoff} plus horizon {horizon} must end before day {}",
            panel.days()
        )));
    }
    let model = fit_model(&panel.truncate(cutoff + 1)?, config)?;
    let base = model.forecast(horizon, 1.0, 1.0, admissions, None)?;
    let observed: Vec<f64> = (cutoff + 1..=cutoff + horizon)
        .map(|d| (panel.deaths_in()[d] + out[d]) as f64)
        .collect();
    let g_last = model.ratio_last();
    let search = optimize_c2(&base.series.deaths_in, g_last, &observed, c2_grid, objective)?;
    let best = model.forecast(horizon, 1.0, search.c2_star, admissions, None)?;
    Ok(BacktestResult {
        cutoff,
        horizon,
        search,
        observed_totals: observed,
        best,
    })
}
