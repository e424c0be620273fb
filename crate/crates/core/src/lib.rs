//! Estimation of calendar-time dependent hospital-stay hazards from aggregate
//! daily counts, with forecasting of in-hospital and total deaths and a
//! simulation harness for checking the estimators against known truth.

pub mod bandwidth;
pub mod error;
pub mod forecast;
pub mod grid;
pub mod hazard;
pub mod indicators;
pub mod kernel;
pub mod missing_link;
pub mod model;
pub mod panel;
pub mod registry;
pub mod sim;
pub mod smoothing;
pub mod study;

pub use error::{EstimationError, PanelError};
pub use grid::{Cause, DurationMatrix, EventGrid, StayOutcome, StayRecord};
pub use hazard::{estimate_all_causes, estimate_hazard, CauseSurfaces, HazardSurface};
pub use panel::{DailyPanel, TimeGridConvention};
pub use smoothing::Bandwidths;
pub use forecast::{ForecastResult, ForecastScenario, RatioCurve};
pub use model::{fit_model, FitConfig, FittedModel};
pub use sim::TrueModel;
pub use study::{run_study, StudyConfig, StudyReport};
