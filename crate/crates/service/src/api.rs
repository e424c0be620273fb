//! JSON HTTP API over datasets and fitted models.
//!
//! Datasets and models live in append-only in-memory maps. Every stored
//! value is immutable and shared through `Arc`, so concurrent reads of one
//! model cannot observe each other.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use pandemon_core::bandwidth::BandwidthChoice;
use pandemon_core::forecast::{
    admissions_registry, default_c2_grid, AdmissionsForecaster, BacktestObjective, ExternalAdmissions,
    ForecastResult,
};
use pandemon_core::missing_link::FitDiagnostics;
use pandemon_core::model::backtest;
use pandemon_core::{fit_model, Bandwidths, Cause, DailyPanel, FitConfig, FittedModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::ServiceError;
use crate::views::{self, HazardSlice, IndicatorKind, IndicatorSeries, RatioView};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Upper bound for fits and backtests.
    pub timeout: Duration,
    /// Directory of dashboard assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            static_dir: None,
        }
    }
}

#[derive(Debug)]
pub struct Dataset {
    pub id: String,
    pub panel: DailyPanel,
}

#[derive(Debug)]
pub struct ModelHandle {
    pub id: String,
    pub dataset_id: String,
    pub model: FittedModel,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Default)]
pub struct AppState {
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    models: RwLock<HashMap<String, Arc<ModelHandle>>>,
    next_id: AtomicU64,
    timeout: Duration,
}

impl AppState {
    pub fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            ..Self::default()
        }
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1)
    }

    pub fn add_dataset(&self, panel: DailyPanel) -> Arc<Dataset> {
        let ds = Arc::new(Dataset {
            id: self.fresh_id("ds-"),
            panel,
        });
        self.datasets.write().expect("dataset store").insert(ds.id.clone(), ds.clone());
        ds
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ServiceError> {
        self.datasets
            .read()
            .expect("dataset store")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound {
                kind: "dataset",
                id: id.into(),
            })
    }

    pub fn add_model(&self, dataset_id: &str, model: FittedModel) -> Arc<ModelHandle> {
        let handle = Arc::new(ModelHandle {
            id: self.fresh_id("model-"),
            dataset_id: dataset_id.into(),
            model,
            created_at: Utc::now(),
        });
        self.models.write().expect("model store").insert(handle.id.clone(), handle.clone());
        handle
    }

    pub fn model(&self, id: &str) -> Result<Arc<ModelHandle>, ServiceError> {
        self.models
            .read()
            .expect("model store")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound {
                kind: "model",
                id: id.into(),
            })
    }
}

pub fn router(config: &ServiceConfig) -> Router {
    router_with_state(Arc::new(AppState::new(config.timeout)), config)
}

pub fn router_with_state(state: Arc<AppState>, config: &ServiceConfig) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/api/datasets", post(create_dataset).get(list_datasets))
        .route("/api/datasets/{id}/fit", post(fit))
        .route("/api/models", get(list_models))
        .route("/api/models/{id}", get(model_info))
        .route("/api/models/{id}/hazard", get(hazard))
        .route("/api/models/{id}/indicators", get(indicators))
        .route("/api/models/{id}/ratio", get(ratio))
        .route("/api/models/{id}/forecast", post(forecast))
        .route("/api/models/{id}/backtest", post(run_backtest))
        .with_state(state);
    match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async {
            ServiceError::NotFound {
                kind: "route",
                id: "requested path".into(),
            }
        }),
    }
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::BadRequest {
            message: e.inner().to_string(),
            field: (path != ".").then_some(path),
            row: None,
        }
    })
}

/// Runs blocking estimation work off the async executor, bounded by the
/// service timeout.
async fn run_bounded<T, F>(state: &AppState, work: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    let task = tokio::task::spawn_blocking(work);
    match tokio::time::timeout(state.timeout, task).await {
        Ok(Ok(result)) => result,
        Ok(Err(join)) => Err(ServiceError::Internal(join.to_string())),
        Err(_) => Err(ServiceError::Timeout(state.timeout)),
    }
}

#[derive(Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub start_date: NaiveDate,
    pub days: usize,
    pub has_outside_deaths: bool,
}

fn dataset_info(ds: &Dataset) -> DatasetInfo {
    DatasetInfo {
        dataset_id: ds.id.clone(),
        start_date: ds.panel.start_date(),
        days: ds.panel.days(),
        has_outside_deaths: ds.panel.deaths_out().is_some(),
    }
}

async fn create_dataset(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<DatasetInfo>, ServiceError> {
    let panel = DailyPanel::ingest_csv(body.as_ref())?;
    let ds = state.add_dataset(panel);
    tracing::info!(dataset = %ds.id, days = ds.panel.days(), "dataset ingested");
    Ok(Json(dataset_info(&ds)))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    let store = state.datasets.read().expect("dataset store");
    let mut out: Vec<DatasetInfo> = store.values().map(|d| dataset_info(d)).collect();
    out.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    Json(out)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    /// Fit on the first `window` days only.
    pub window: Option<usize>,
    pub max_duration: Option<usize>,
    pub kernel: Option<String>,
}

impl FitRequest {
    fn config(&self, days: usize) -> Result<FitConfig, ServiceError> {
        let bandwidths = match (self.b1, self.b2) {
            (None, None) => BandwidthChoice::auto(),
            (Some(b1), Some(b2)) => BandwidthChoice::Fixed(
                Bandwidths::new(b1, b2).map_err(|e| ServiceError::field("b1", e.to_string()))?,
            ),
            (Some(_), None) => return Err(ServiceError::field("b2", "b1 and b2 must be given together")),
            (None, Some(_)) => return Err(ServiceError::field("b1", "b1 and b2 must be given together")),
        };
        if let Some(w) = self.window {
            if w < 2 || w > days {
                return Err(ServiceError::field("window", format!("window must be in 2..={days}, got {w}")));
            }
        }
        let mut config = FitConfig {
            bandwidths,
            max_duration: self.max_duration,
            ..FitConfig::default()
        };
        if let Some(k) = &self.kernel {
            config.kernel = k.clone();
        }
        Ok(config)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub start_date: NaiveDate,
    pub days: usize,
    pub max_duration: usize,
    pub bandwidths: Bandwidths,
    pub diagnostics: FitDiagnostics,
}

fn model_summary(h: &ModelHandle) -> ModelInfo {
    ModelInfo {
        model_id: h.id.clone(),
        dataset_id: h.dataset_id.clone(),
        created_at: h.created_at,
        start_date: h.model.panel.start_date(),
        days: h.model.summary.days,
        max_duration: h.model.summary.max_duration,
        bandwidths: h.model.summary.diagnostics.bandwidths,
        diagnostics: h.model.summary.diagnostics.clone(),
    }
}

async fn fit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ModelInfo>, ServiceError> {
    let ds = state.dataset(&id)?;
    let req: FitRequest = parse_body(&body)?;
    let config = req.config(ds.panel.days())?;
    let window = req.window;
    tracing::info!(dataset = %ds.id, ?window, "fit started");
    let started = Instant::now();
    let panel_ds = ds.clone();
    let model = run_bounded(&state, move || {
        let panel = match window {
            Some(w) => panel_ds.panel.truncate(w)?,
            None => panel_ds.panel.clone(),
        };
        Ok(fit_model(&panel, &config)?)
    })
    .await?;
    let handle = state.add_model(&ds.id, model);
    tracing::info!(
        model = %handle.id,
        iterations = handle.model.summary.diagnostics.iterations,
        elapsed_ms = started.elapsed().as_millis() as u64,
        "fit finished"
    );
    Ok(Json(model_summary(&handle)))
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    let store = state.models.read().expect("model store");
    let mut out: Vec<ModelInfo> = store.values().map(|h| model_summary(h)).collect();
    out.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    Json(out)
}

async fn model_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ModelInfo>, ServiceError> {
    let handle = state.model(&id)?;
    Ok(Json(model_summary(&handle)))
}

fn parse_cause(query: &HashMap<String, String>, default: Cause) -> Result<Cause, ServiceError> {
    match query.get("cause") {
        None => Ok(default),
        Some(c) => c.parse().map_err(|e: String| ServiceError::field("cause", e)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HazardResponse {
    pub model_id: String,
    pub cause: Cause,
    pub max_duration: usize,
    pub slices: Vec<HazardSlice>,
}

async fn hazard(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<HazardResponse>, ServiceError> {
    let h = state.model(&id)?;
    let cause = parse_cause(&query, Cause::All)?;
    let panel = &h.model.panel;
    let days = match query.get("dates").map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => vec![panel.days() - 1],
        Some(list) => list
            .split(',')
            .map(|s| {
                let date: NaiveDate = s
                    .trim()
                    .parse()
                    .map_err(|_| ServiceError::field("dates", format!("`{s}` is not a YYYY-MM-DD date")))?;
                panel
                    .day_of(date)
                    .ok_or_else(|| ServiceError::field("dates", format!("{date} is outside the fitted period")))
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(Json(HazardResponse {
        model_id: h.id.clone(),
        cause,
        max_duration: h.model.summary.max_duration,
        slices: views::hazard_slices(&h.model, cause, &days),
    }))
}

async fn indicators(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Json<IndicatorSeries>, ServiceError> {
    let h = state.model(&id)?;
    let kind: IndicatorKind = query
        .get("type")
        .ok_or_else(|| ServiceError::field("type", "missing indicator type (median or exitprob)"))?
        .parse()
        .map_err(|e: String| ServiceError::field("type", e))?;
    let cause = parse_cause(&query, kind.default_cause())?;
    kind.check_cause(cause).map_err(|e| ServiceError::field("cause", e))?;
    let duration = match query.get("duration") {
        None => 0,
        Some(d) => d
            .parse()
            .map_err(|_| ServiceError::field("duration", format!("`{d}` is not a nonnegative integer")))?,
    };
    Ok(Json(views::indicator_series(&h.model, kind, cause, duration)))
}

async fn ratio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RatioView>, ServiceError> {
    let h = state.model(&id)?;
    views::ratio_view(&h.model)
        .map(Json)
        .ok_or_else(|| ServiceError::BadRequest {
            message: "the dataset has no out-of-hospital deaths".into(),
            field: None,
            row: None,
        })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    pub horizon: usize,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    /// Explicit admissions for each forecast day; replaces the model.
    pub admissions_override: Option<Vec<f64>>,
    /// Named admissions model, `persistence` by default.
    pub admissions_model: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn admissions_model(name: Option<&str>, field: &str) -> Result<Box<dyn AdmissionsForecaster>, ServiceError> {
    let reg = admissions_registry();
    match name {
        None => Ok(reg.create_default()),
        Some(n) => reg.create(n).map_err(|e| ServiceError::field(field, e.to_string())),
    }
}

async fn forecast(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ForecastResult>, ServiceError> {
    let h = state.model(&id)?;
    let req: ForecastRequest = parse_body(&body)?;
    let admissions: Box<dyn AdmissionsForecaster> = match req.admissions_override {
        Some(path) => {
            if path.len() != req.horizon {
                return Err(ServiceError::field(
                    "admissions_override",
                    format!("expected {} values, got {}", req.horizon, path.len()),
                ));
            }
            Box::new(ExternalAdmissions(path))
        }
        None => admissions_model(req.admissions_model.as_deref(), "admissions_model")?,
    };
    let result = h
        .model
        .forecast(req.horizon, req.c1, req.c2, admissions.as_ref(), Some(h.id.clone()))?;
    Ok(Json(result))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestRequest {
    /// Last day (index) used for fitting.
    pub cutoff: usize,
    pub horizon: usize,
    pub c2_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub objective: BacktestObjective,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BacktestResponse {
    pub c2_star: f64,
    pub c2_grid: Vec<f64>,
    pub sse_curve: Vec<f64>,
    pub observed_totals: Vec<f64>,
    pub best: ForecastResult,
}

async fn run_backtest(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<BacktestResponse>, ServiceError> {
    let h = state.model(&id)?;
    let req: BacktestRequest = parse_body(&body)?;
    let grid = req.c2_grid.unwrap_or_else(default_c2_grid);
    if grid.is_empty() || grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(ServiceError::field("c2_grid", "grid values must be positive and finite"));
    }
    let handle = h.clone();
    let result = run_bounded(&state, move || {
        let m = &handle.model;
        let adm = admissions_registry().create_default();
        Ok(backtest(
            &m.panel,
            req.cutoff,
            req.horizon,
            &grid,
            &m.summary.config,
            adm.as_ref(),
            req.objective,
        )?)
    })
    .await?;
    Ok(Json(BacktestResponse {
        c2_star: result.search.c2_star,
        c2_grid: result.search.c2_grid,
        sse_curve: result.search.sse_curve,
        observed_totals: result.observed_totals,
        best: result.best,
    }))
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(addr: std::net::SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(&config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
