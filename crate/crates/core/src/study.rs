//! Monte-Carlo comparison of estimators against the simulator's truth.
//!
//! For every sample size and replicate a pandemic is simulated, each
//! registered hazard fitter is run, and the cause-specific surfaces are
//! scored against the true hazards. Per report cell the mean integrated
//! squared error is decomposed into squared integrated bias and mean
//! integrated variance over the cells defined in every successful replicate,
//! which makes the decomposition exact.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::grid::Cause;
use crate::hazard::{estimate_all_causes, CauseSurfaces, HazardSurface};
use crate::kernel::{kernel_registry, Kernel};
use crate::bandwidth::BandwidthChoice;
use crate::missing_link::{fit_missing_link, initial_imputation, split_causes, IterationOptions};
use crate::registry::Registry;
use crate::sim::{replicate_rng, simulate_cohorts, SimulatedPandemic, TrueModel};
use crate::smoothing::Bandwidths;

/// Fraction of failed replicates above which a report cell is aborted.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// Cells scored: `w < W` (the pooled last duration has no single true
/// value).
fn scored(t: usize, w: usize, max_duration: usize) -> bool {
    w <= t && w < max_duration
}

/// Mean squared deviation from the truth over defined, scored cells.
/// Returns the error and the number of cells used.
pub fn ise(est: &HazardSurface, model: &TrueModel, cause: Cause) -> (f64, usize) {
    let cap = est.max_duration();
    let mut sum = 0.0;
    let mut n = 0;
    for (t, w, v) in est.defined_cells() {
        if scored(t, w, cap) {
            let d = v - model.true_hazard(t, w, cause);
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        (f64::NAN, 0)
    } else {
        (sum / n as f64, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub surfaces: CauseSurfaces,
    /// Fixed-point convergence, for iterative fitters.
    pub converged: Option<bool>,
    pub bandwidths: Bandwidths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitterSettings {
    pub max_duration: usize,
    pub bandwidths: BandwidthChoice,
    pub iteration: IterationOptions,
}

/// A hazard estimator that can be scored in the study.
pub trait HazardFitter: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(
        &self,
        sim: &SimulatedPandemic,
        settings: &FitterSettings,
        kernel: &dyn Kernel,
    ) -> Result<FitOutcome, EstimationError>;
}

/// Local-linear estimator on the linked records.
pub struct FullInformation;

impl HazardFitter for FullInformation {
    fn name(&self) -> &'static str {
        "full"
    }

    fn fit(
        &self,
        sim: &SimulatedPandemic,
        settings: &FitterSettings,
        kernel: &dyn Kernel,
    ) -> Result<FitOutcome, EstimationError> {
        let grid = sim.event_grid(settings.max_duration);
        let (bandwidths, _) = settings.bandwidths.resolve(&grid, kernel)?;
        Ok(FitOutcome {
            surfaces: estimate_all_causes(&grid, bandwidths, kernel),
            converged: None,
            bandwidths,
        })
    }
}

/// Missing-link iteration on the marginal daily series only.
pub struct PartialInformation;

impl HazardFitter for PartialInformation {
    fn name(&self) -> &'static str {
        "partial"
    }

    fn fit(
        &self,
        sim: &SimulatedPandemic,
        settings: &FitterSettings,
        kernel: &dyn Kernel,
    ) -> Result<FitOutcome, EstimationError> {
        let start = initial_imputation(&sim.panel, settings.max_duration)?;
        let (bandwidths, _) = settings.bandwidths.resolve(&start, kernel)?;
        let fit = fit_missing_link(&sim.panel, settings.max_duration, bandwidths, kernel, settings.iteration)?;
        let surfaces = split_causes(&sim.panel, &fit, kernel);
        Ok(FitOutcome {
            surfaces,
            converged: Some(fit.diagnostics.converged),
            bandwidths,
        })
    }
}

pub fn fitter_registry() -> Registry<dyn HazardFitter> {
    let mut reg: Registry<dyn HazardFitter> = Registry::new("hazard fitter");
    reg.register("full", || Box::new(FullInformation))
        .register("partial", || Box::new(PartialInformation))
        .set_default("full");
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sizes: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub max_duration: usize,
    pub bandwidths: BandwidthChoice,
    pub kernel: String,
    pub methods: Vec<String>,
    pub iteration: IterationOptions,
    /// Reuse one stream for every replicate (degenerate check).
    pub identical_replicates: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1e4, 4e4],
            replicates: 50,
            seed: 20201001,
            max_duration: 60,
            bandwidths: BandwidthChoice::auto(),
            kernel: "epanechnikov".into(),
            methods: vec!["full".into(), "partial".into()],
            iteration: IterationOptions::default(),
            identical_replicates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub size: f64,
    pub method: String,
    pub cause: Cause,
    pub mise: f64,
    pub isb: f64,
    pub miv: f64,
    /// Per-replicate errors over the common cells.
    pub ise: Vec<f64>,
    pub median_ise: f64,
    pub cells: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub aborted: bool,
    /// Replicates whose fit reached its fixed point (iterative fitters).
    pub converged: Option<usize>,
    /// Bandwidths used by each successful replicate.
    pub bandwidths: Vec<Bandwidths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub cells: Vec<StudyCell>,
}

impl StudyReport {
    pub fn cell(&self, size: f64, method: &str, cause: Cause) -> Option<&StudyCell> {
        self.cells
            .iter()
            .find(|c| c.size == size && c.method == method && c.cause == cause)
    }

    /// One row per size and method; deaths then recoveries, each as
    /// MISE, ISB, MIV.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "method",
            "deaths_mise",
            "deaths_isb",
            "deaths_miv",
            "recoveries_mise",
            "recoveries_isb",
            "recoveries_miv",
            "replicates",
            "failed",
        ])?;
        for &size in &self.config.sizes {
            for method in &self.config.methods {
                let (Some(d), Some(r)) = (
                    self.cell(size, method, Cause::Death),
                    self.cell(size, method, Cause::Recovery),
                ) else {
                    continue;
                };
                let f = |c: &StudyCell, v: f64| if c.aborted { "NA".to_string() } else { format!("{v:e}") };
                w.write_record([
                    format!("{size}"),
                    method.clone(),
                    f(d, d.mise),
                    f(d, d.isb),
                    f(d, d.miv),
                    f(r, r.mise),
                    f(r, r.isb),
                    f(r, r.miv),
                    d.succeeded.to_string(),
                    d.failed.to_string(),
                ])?;
            }
        }
        w.flush()
    }
}

/// MISE, ISB and MIV of `estimates` (one vector per replicate, aligned on
/// the same cells) against `truth`.
pub fn decompose(estimates: &[Vec<f64>], truth: &[f64]) -> (f64, f64, f64, Vec<f64>) {
    let r = estimates.len() as f64;
    let n = truth.len() as f64;
    let ise: Vec<f64> = estimates
        .iter()
        .map(|e| e.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
        .collect();
    let mise = ise.iter().sum::<f64>() / r;
    let mut isb = 0.0;
    let mut miv = 0.0;
    for (c, &a) in truth.iter().enumerate() {
        let mean = estimates.iter().map(|e| e[c]).sum::<f64>() / r;
        isb += (mean - a) * (mean - a);
        miv += estimates.iter().map(|e| (e[c] - mean) * (e[c] - mean)).sum::<f64>() / r;
    }
    (mise, isb / n, miv / n, ise)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn summarise(
    size: f64,
    method: &str,
    cause: Cause,
    outcomes: &[Result<FitOutcome, EstimationError>],
    model: &TrueModel,
    max_duration: usize,
) -> StudyCell {
    let ok: Vec<&FitOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failed = outcomes.len() - ok.len();
    let converged = ok
        .iter()
        .map(|o| o.converged)
        .collect::<Option<Vec<bool>>>()
        .map(|c| c.iter().filter(|&&x| x).count());
    let surface = |o: &FitOutcome| match cause {
        Cause::Death => o.surfaces.death.clone(),
        Cause::Recovery => o.surfaces.recovery.clone(),
        Cause::All => o.surfaces.all.clone(),
    };
    let aborted = ok.len() < 2 || failed as f64 > MAX_FAILURE_SHARE * outcomes.len() as f64;
    let mut cell = StudyCell {
        size,
        method: method.to_string(),
        cause,
        mise: f64::NAN,
        isb: f64::NAN,
        miv: f64::NAN,
        ise: Vec::new(),
        median_ise: f64::NAN,
        cells: 0,
        succeeded: ok.len(),
        failed,
        aborted,
        converged,
        bandwidths: ok.iter().map(|o| o.bandwidths).collect(),
    };
    if aborted {
        return cell;
    }
    let surfaces: Vec<HazardSurface> = ok.iter().map(|o| surface(o)).collect();
    let common: Vec<(usize, usize)> = surfaces[0]
        .defined_cells()
        .filter(|&(t, w, _)| scored(t, w, max_duration))
        .filter(|&(t, w, _)| surfaces.iter().all(|s| s.is_defined(t, w)))
        .map(|(t, w, _)| (t, w))
        .collect();
    if common.is_empty() {
        cell.aborted = true;
        return cell;
    }
    let truth: Vec<f64> = common.iter().map(|&(t, w)| model.true_hazard(t, w, cause)).collect();
    let est: Vec<Vec<f64>> = surfaces
        .iter()
        .map(|s| common.iter().map(|&(t, w)| s.hazard_or_zero(t, w)).collect())
        .collect();
    let (mise, isb, miv, ise) = decompose(&est, &truth);
    cell.mise = mise;
    cell.isb = isb;
    cell.miv = miv;
    cell.median_ise = median(&ise);
    cell.ise = ise;
    cell.cells = common.len();
    cell
}

/// Runs every method on every replicate of every size. Replicates run in
/// parallel on independent streams, so the report only depends on the
/// configuration.
pub fn run_study(model: &TrueModel, config: &StudyConfig) -> Result<StudyReport, EstimationError> {
    if config.replicates < 2 {
        return Err(EstimationError::InvalidInput(format!(
            "a study needs at least 2 replicates, got {}",
            config.replicates
        )));
    }
    if config.sizes.is_empty() || config.sizes.iter().any(|n| !(*n > 0.0)) {
        return Err(EstimationError::InvalidInput("sizes must be positive".into()));
    }
    crate::panel::TimeGridConvention::new(config.max_duration, model.days)?;
    let kernel = kernel_registry().create(&config.kernel)?;
    let fitters = fitter_registry();
    let methods: Vec<Box<dyn HazardFitter>> = config
        .methods
        .iter()
        .map(|m| fitters.create(m))
        .collect::<Result<_, _>>()?;
    let settings = FitterSettings {
        max_duration: config.max_duration,
        bandwidths: config.bandwidths.clone(),
        iteration: config.iteration,
    };
    let mut cells = Vec::new();
    for (size_index, &size) in config.sizes.iter().enumerate() {
        let sized = model.with_expected_admissions(size)?;
        // outcomes[replicate][method]
        let outcomes: Vec<Vec<Result<FitOutcome, EstimationError>>> = (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let stream = if config.identical_replicates { 0 } else { r as u64 };
                let stream = ((size_index as u64) << 32) | stream;
                let sim = simulate_cohorts(&sized, &mut replicate_rng(config.seed, stream));
                methods
                    .iter()
                    .map(|m| m.fit(&sim, &settings, kernel.as_ref()))
                    .collect()
            })
            .collect();
        for (k, method) in config.methods.iter().enumerate() {
            let per_method: Vec<_> = outcomes.iter().map(|o| o[k].clone()).collect();
            for cause in [Cause::Death, Cause::Recovery] {
                cells.push(summarise(size, method, cause, &per_method, &sized, config.max_duration));
            }
        }
    }
    Ok(StudyReport {
        config: config.clone(),
        cells,
    })
}
