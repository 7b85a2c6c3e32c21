//! HTTP facade over simulation, step analysis and identification.
//!
//! Every endpoint is a pure function of its request body except the model
//! store, a keyed map written by `PUT /v1/models/{id}` (last write wins).
//! Errors are returned as `{code, message, field}` with status 400 for bodies
//! that do not parse and 422 for well-formed requests that violate an
//! invariant.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use prodyn::io::{series_from_columns, ModelFile};
use prodyn::stepan::{analyze_step, DEFAULT_THRESHOLD};
use prodyn::workflow::{identify_series, simulate_absolute, IdentifyOutput};
use prodyn::{StepMetrics, TransferFunction};

pub const DEFAULT_BIND: &str = "127.0.0.1:8787";

/// Trajectory resolution used for step summaries.
const STEP_DT_H: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    problem: Problem,
}

impl ApiError {
    fn malformed(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            problem: Problem {
                code: "malformed".into(),
                message: message.into(),
                field: None,
            },
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            problem: Problem {
                code: "invalid".into(),
                message: message.into(),
                field: Some(field.into()),
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            problem: Problem {
                code: "internal".into(),
                message: message.into(),
                field: None,
            },
        }
    }

    fn not_found(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            problem: Problem {
                code: "not_found".into(),
                message: message.into(),
                field: Some(field.into()),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.problem)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

/// Inline model or a reference to a stored one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Inline(ModelFile),
    Stored { id: String },
}

#[derive(Debug, Clone, Default)]
pub struct AppState {
    models: Arc<RwLock<HashMap<String, ModelFile>>>,
}

impl AppState {
    fn resolve(&self, model: &ModelRef) -> Result<(ModelFile, TransferFunction<f64>), ApiError> {
        let file = match model {
            ModelRef::Inline(m) => m.clone(),
            ModelRef::Stored { id } => self
                .models
                .read()
                .expect("model store lock")
                .get(id)
                .cloned()
                .ok_or_else(|| ApiError::invalid("model.id", format!("no stored model `{id}`")))?,
        };
        let tf = file
            .tf()
            .map_err(|e| ApiError::invalid("model", e.to_string()))?;
        Ok((file, tf))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanBody {
    #[serde(default)]
    pub t0: f64,
    pub period_h: f64,
    /// Per-hour increments, or cumulative goal depths when `absolute`.
    pub goals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRequest {
    pub model: ModelRef,
    pub plan: PlanBody,
    #[serde(default)]
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseSummary {
    pub increment: f64,
    /// Long-run output rate, `K · increment` per period.
    pub steady_rate: Option<f64>,
    pub step: StepMetrics<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResponse {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub staircase: Option<StaircaseSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub model: ModelRef,
    pub amplitude: f64,
    pub horizon_h: f64,
    pub dt_h: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub metrics: StepMetrics<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesBody {
    pub t_h: Vec<f64>,
    pub u_goal_m: Vec<f64>,
    pub y_depth_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyRequest {
    pub series: SeriesBody,
    #[serde(default = "default_order")]
    pub order: usize,
    pub split_h: f64,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
}

fn default_order() -> usize {
    1
}

fn default_candidates() -> usize {
    3
}

fn positive(field: &str, v: f64) -> Result<f64, ApiError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ApiError::invalid(field, "must be positive and finite"))
    }
}

fn step_summary(
    tf: &TransferFunction<f64>,
    amplitude: f64,
    horizon: f64,
    dt: f64,
    threshold: f64,
) -> Result<StepResponse, ApiError> {
    let (metrics, response) = analyze_step(tf, amplitude, horizon, dt, threshold)
        .map_err(|e| ApiError::invalid("model", e.to_string()))?;
    Ok(StepResponse {
        metrics,
        t: response.times(),
        y: response.values,
    })
}

pub fn simulate(state: &AppState, req: &SimRequest) -> Result<SimResponse, ApiError> {
    let (file, tf) = state.resolve(&req.model)?;
    let period = positive("plan.period_h", req.plan.period_h)?;
    let goals = &req.plan.goals;
    if goals.is_empty() {
        return Err(ApiError::invalid("plan.goals", "plan has no goals"));
    }
    if !goals.iter().all(|g| g.is_finite()) || !req.plan.t0.is_finite() {
        return Err(ApiError::invalid("plan", "values must be finite"));
    }
    let (u, y, increments) = if req.absolute {
        if let Some(i) = goals.windows(2).position(|w| w[1] < w[0]) {
            return Err(ApiError::invalid(
                "plan.goals",
                format!("goal decreases at index {}", i + 1),
            ));
        }
        let y = simulate_absolute(&file, goals, period)
            .map_err(|e| ApiError::invalid("model", e.to_string()))?;
        let inc: Vec<f64> = goals.windows(2).map(|w| w[1] - w[0]).collect();
        (goals.clone(), y, inc)
    } else {
        if let Some(i) = goals.iter().position(|g| *g < 0.0) {
            return Err(ApiError::invalid(
                "plan.goals",
                format!("negative increment at index {i}"),
            ));
        }
        let mut u = Vec::with_capacity(goals.len() + 1);
        u.push(0.0);
        for g in goals {
            u.push(u[u.len() - 1] + g);
        }
        let rec = tf
            .discretize_zoh(period)
            .map_err(|e| ApiError::invalid("model", e.to_string()))?;
        let y = rec.run(&u);
        (u, y, goals.clone())
    };
    let t = (0..y.len())
        .map(|k| req.plan.t0 + period * k as f64)
        .collect();
    let constant = increments
        .first()
        .filter(|first| increments.iter().all(|g| g == *first));
    let staircase = match constant {
        Some(&increment) => {
            let horizon = period * increments.len() as f64;
            let step = step_summary(
                &tf,
                increment,
                horizon,
                STEP_DT_H.min(period),
                DEFAULT_THRESHOLD,
            )?
            .metrics;
            Some(StaircaseSummary {
                increment,
                steady_rate: step.dc_gain.map(|k| k * increment),
                step,
            })
        }
        None => None,
    };
    Ok(SimResponse { t, u, y, staircase })
}

pub fn step(state: &AppState, req: &StepRequest) -> Result<StepResponse, ApiError> {
    let (_, tf) = state.resolve(&req.model)?;
    if !req.amplitude.is_finite() {
        return Err(ApiError::invalid("amplitude", "must be finite"));
    }
    let horizon = positive("horizon_h", req.horizon_h)?;
    let dt = positive("dt_h", req.dt_h.unwrap_or(STEP_DT_H))?;
    let threshold = positive("threshold", req.threshold.unwrap_or(DEFAULT_THRESHOLD))?;
    step_summary(&tf, req.amplitude, horizon, dt, threshold)
}

pub fn identify(req: &IdentifyRequest) -> Result<IdentifyOutput, ApiError> {
    let s = &req.series;
    let series = series_from_columns(&s.t_h, s.u_goal_m.clone(), s.y_depth_m.clone())
        .map_err(|e| ApiError::invalid("series", e.to_string()))?;
    if req.order == 0 {
        return Err(ApiError::invalid("order", "must be at least 1"));
    }
    if req.candidates == 0 {
        return Err(ApiError::invalid("candidates", "must be at least 1"));
    }
    positive("split_h", req.split_h)?;
    identify_series(&series, req.order, req.split_h, req.candidates)
        .map_err(|e| ApiError::invalid("series", e.to_string()))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn simulate_handler(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<SimResponse>, ApiError> {
    let req: SimRequest = parse_body(&body)?;
    simulate(&state, &req).map(Json)
}

async fn step_handler(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Json<StepResponse>, ApiError> {
    let req: StepRequest = parse_body(&body)?;
    step(&state, &req).map(Json)
}

async fn identify_handler(body: Bytes) -> Result<Json<IdentifyOutput>, ApiError> {
    let req: IdentifyRequest = parse_body(&body)?;
    // Estimation is CPU-bound; keep it off the async workers.
    tokio::task::spawn_blocking(move || identify(&req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn put_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ModelFile>, ApiError> {
    let model: ModelFile = parse_body(&body)?;
    model
        .validate()
        .map_err(|e| ApiError::invalid("model", e.to_string()))?;
    state
        .models
        .write()
        .expect("model store lock")
        .insert(id, model.clone());
    Ok(Json(model))
}

async fn get_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ModelFile>, ApiError> {
    let store = state.models.read().expect("model store lock");
    store
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("id", format!("no stored model `{id}`")))
}

pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/simulate", post(simulate_handler))
        .route("/v1/step", post(step_handler))
        .route("/v1/identify", post(identify_handler))
        .route("/v1/models/{id}", put(put_model).get(get_model))
        .with_state(AppState::default())
}
