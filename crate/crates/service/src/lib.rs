//! Local HTTP JSON API over an immutable model bundle.
//!
//! Endpoints: `GET /api/health`, `GET /api/model`, `POST /api/explain` and
//! `GET /api/instances`. Every handler reads the same shared bundle; Local
//! explanations are refit per request with a seed derived from the instance,
//! so identical requests produce byte-identical bodies.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use factorlens_core::bundle::{BundleError, InstanceFilter, InstanceSample};
use factorlens_core::presentation::rule_text;
use factorlens_core::{ExplainerEntry, FeatureMeta, ModelBundle, Task, XaiType};
use serde::{Deserialize, Serialize};

/// Instances returned by `/api/instances` when `count` is omitted.
pub const DEFAULT_INSTANCE_COUNT: usize = 10;

#[derive(Clone, Default)]
pub struct AppState {
    bundle: Option<Arc<ModelBundle>>,
}

impl AppState {
    pub fn new(bundle: ModelBundle) -> Self {
        AppState {
            bundle: Some(Arc::new(bundle)),
        }
    }

    /// State with no bundle; model endpoints answer 503.
    pub fn empty() -> Self {
        AppState::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_loaded() -> Self {
        ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: "no model bundle loaded".into(),
        }
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        let status = match e {
            BundleError::Io { .. } | BundleError::Json(_) | BundleError::Invalid(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub bundle_loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    #[serde(flatten)]
    pub meta: FeatureMeta,
    /// Values accepted by `/api/explain`.
    pub accepted_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerInfo {
    #[serde(flatten)]
    pub entry: ExplainerEntry,
    /// Outlier condition, present for rule-based explainers.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: u32,
    pub seed: u64,
    pub dataset: String,
    pub task: Task,
    pub target_unit: String,
    pub display_scale: f64,
    pub config_hash: String,
    pub features: Vec<FeatureInfo>,
    pub xai_types: Vec<XaiType>,
    pub explainers: Vec<ExplainerInfo>,
}

impl ModelInfo {
    pub fn from_bundle(b: &ModelBundle) -> Self {
        let meta = &b.dataset_meta;
        ModelInfo {
            version: b.version,
            seed: b.seed,
            dataset: meta.name.clone(),
            task: meta.task,
            target_unit: meta.target_unit.clone(),
            display_scale: meta.display_scale,
            config_hash: meta.config_hash.clone(),
            features: meta
                .features
                .iter()
                .map(|f| FeatureInfo {
                    meta: f.clone(),
                    accepted_range: f.accepted_range(),
                })
                .collect(),
            xai_types: b.explainers.iter().map(ExplainerEntry::xai_type).collect(),
            explainers: b
                .explainers
                .iter()
                .map(|e| ExplainerInfo {
                    entry: e.clone(),
                    rule_text: e.rule().map(|r| rule_text(r, &meta.features)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub xai_type: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub factor_overrides: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancesResponse {
    pub subspace: InstanceFilter,
    pub instances: Vec<InstanceSample>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model))
        .route("/api/explain", post(explain))
        .route("/api/instances", get(instances))
        .with_state(state)
}

fn loaded(state: &AppState) -> Result<&ModelBundle, ApiError> {
    state.bundle.as_deref().ok_or_else(ApiError::not_loaded)
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        bundle_loaded: state.bundle.is_some(),
    })
}

async fn model(State(state): State<AppState>) -> ApiResult<ModelInfo> {
    Ok(Json(ModelInfo::from_bundle(loaded(&state)?)))
}

async fn explain(State(state): State<AppState>, body: Bytes) -> Response {
    match explain_inner(&state, &body) {
        Ok(table) => Json(table).into_response(),
        Err(e) => e.into_response(),
    }
}

fn explain_inner(
    state: &AppState,
    body: &[u8],
) -> Result<factorlens_core::ExplanationTable, ApiError> {
    let bundle = loaded(state)?;
    let req: ExplainRequest = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid explain request: {e}")))?;
    let xai: XaiType = req.xai_type.parse().map_err(ApiError::bad_request)?;
    let overrides = req.factor_overrides.unwrap_or_default();
    Ok(bundle.explain(xai, &req.values, &overrides)?)
}

async fn instances(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<InstancesResponse> {
    let bundle = loaded(&state)?;
    let filter: InstanceFilter = match params.get("subspace").map(String::as_str) {
        None | Some("") => InstanceFilter::All,
        Some(s) => s.parse().map_err(ApiError::bad_request)?,
    };
    let count = match params.get("count") {
        None => DEFAULT_INSTANCE_COUNT,
        Some(c) => c
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("count `{c}` is not a non-negative integer")))?,
    };
    let instances = bundle.sample_instances(filter, count)?;
    Ok(Json(InstancesResponse {
        subspace: filter,
        instances,
    }))
}

/// Serve `state` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
