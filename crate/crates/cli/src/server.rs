//! JSON HTTP API over a loaded bundle.
//!
//! Adaptation never mutates the bundle in place: the handler clones the
//! current snapshot, inserts the adapted model, bumps `model_version` and
//! swaps the snapshot, so concurrent readers always see a consistent model.
//! Adapted models live only in memory.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use aeg_core::acoustic::{topic_posterior, TopicPosterior};
use aeg_core::features::{aggregate_segments, apply_standardization, FrameMatrix};
use aeg_core::gaussian::Gaussian2;
use aeg_core::personalize::{map_adapt, AdaptConfig, AdaptSchedule, PersonalDatum};
use aeg_core::predict::{EmotionPrediction, MixtureComponent};
use aeg_core::retrieval::{model_fingerprint, rank, LibraryIndex, MatchMode, Method, Query};
use aeg_core::{Error, ModelBundle};

struct Served {
    version: u64,
    bundle: ModelBundle,
}

#[derive(Clone)]
pub struct AppState {
    current: Arc<RwLock<Arc<Served>>>,
}

impl AppState {
    pub fn new(bundle: ModelBundle) -> Self {
        Self {
            current: Arc::new(RwLock::new(Arc::new(Served { version: 1, bundle }))),
        }
    }

    fn snapshot(&self) -> Arc<Served> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

pub fn router(bundle: ModelBundle) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/predict", post(predict).options(preflight))
        .route("/retrieve", post(retrieve).options(preflight))
        .route("/adapt", post(adapt).options(preflight))
        .route("/clips/{id}", get(clip))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(AppState::new(bundle))
}

async fn allow_any_origin(mut res: Response) -> Response {
    res.headers_mut()
        .insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    res
}

async fn preflight() -> impl IntoResponse {
    (
        StatusCode::NO_CONTENT,
        [
            (header::ACCESS_CONTROL_ALLOW_METHODS, "GET, POST, OPTIONS"),
            (header::ACCESS_CONTROL_ALLOW_HEADERS, "content-type"),
        ],
    )
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "NotFound",
            message,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into()).into()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) | Error::CorruptBundle(_) | Error::UnsupportedVersion(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::ModelMismatch(_) | Error::ModelCollapsed => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "InvalidInput",
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "model_version": st.snapshot().version}))
}

async fn model(State(st): State<AppState>) -> ApiResult<serde_json::Value> {
    let s = st.snapshot();
    Ok(Json(json!({
        "model_version": s.version,
        "model_ref": s.bundle.model_ref(),
        "users": s.bundle.adapted.keys().collect::<Vec<_>>(),
        "manifest": s.bundle.manifest(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    theta: Option<Vec<f64>>,
    clip_id: Option<String>,
    /// Raw frame features, one row per frame.
    features: Option<Vec<Vec<f64>>>,
    user_id: Option<String>,
    #[serde(default)]
    mixture: bool,
}

#[derive(Debug, Serialize)]
struct PredictResponse {
    clip_id: String,
    theta: Vec<f64>,
    mean: [f64; 2],
    cov: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    mixture: Option<Vec<MixtureComponent>>,
    model_version: u64,
}

fn indexed(bundle: &ModelBundle) -> Result<&LibraryIndex, ApiError> {
    bundle
        .index
        .as_ref()
        .ok_or_else(|| ApiError::not_found("bundle has no library index".into()))
}

fn clip_theta(bundle: &ModelBundle, clip_id: &str) -> Result<Vec<f64>, ApiError> {
    indexed(bundle)?
        .get(clip_id)
        .map(|e| e.theta.clone())
        .ok_or_else(|| ApiError::not_found(format!("clip {clip_id} is not indexed")))
}

fn features_theta(bundle: &ModelBundle, frames: Vec<Vec<f64>>) -> Result<Vec<f64>, ApiError> {
    let fm = FrameMatrix::new("request", frames)?;
    let std = apply_standardization(&fm, &bundle.standardization)?;
    let seg = aggregate_segments(&std, bundle.window, bundle.hop)?;
    Ok(topic_posterior(&seg, &bundle.acoustic)?.theta)
}

async fn predict(State(st): State<AppState>, body: Result<Json<PredictRequest>, JsonRejection>) -> ApiResult<PredictResponse> {
    let Json(req) = body?;
    let s = st.snapshot();
    let b = &s.bundle;
    let (id, theta) = match (req.theta, req.clip_id, req.features) {
        (Some(t), None, None) => ("request".to_string(), t),
        (None, Some(c), None) => {
            let t = clip_theta(b, &c)?;
            (c, t)
        }
        (None, None, Some(f)) => ("request".to_string(), features_theta(b, f)?),
        _ => return Err(ApiError::invalid("give exactly one of theta, clip_id or features")),
    };
    let model = b.model_for(req.user_id.as_deref())?;
    let p = EmotionPrediction::new(id, &theta, model, req.mixture)?;
    Ok(Json(PredictResponse {
        clip_id: p.clip_id,
        theta: p.theta,
        mean: p.reduced.mean(),
        cov: p.reduced.cov().to_array(),
        mixture: p.mixture,
        model_version: s.version,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    query: Query,
    #[serde(default = "default_method")]
    method: Method,
    #[serde(default = "default_topk")]
    topk: usize,
    user_id: Option<String>,
    #[serde(default)]
    mode: MatchMode,
}

fn default_method() -> Method {
    Method::EmotionPrediction
}

fn default_topk() -> usize {
    10
}

#[derive(Debug, Serialize)]
struct RetrievedClip {
    clip_id: String,
    score: f64,
    mean: [f64; 2],
    cov: [f64; 3],
}

async fn retrieve(
    State(st): State<AppState>,
    body: Result<Json<RetrieveRequest>, JsonRejection>,
) -> ApiResult<Vec<RetrievedClip>> {
    let Json(req) = body?;
    if req.topk == 0 {
        return Err(ApiError::invalid("topk must be at least 1"));
    }
    let s = st.snapshot();
    let b = &s.bundle;
    let model = b.model_for(req.user_id.as_deref())?;
    let base = indexed(b)?;
    let personal;
    let idx = match req.user_id.as_deref().and_then(|u| b.adapted.get(u)) {
        Some(m) => {
            personal = base.with_model(m, model_fingerprint(Some(&b.acoustic), m))?;
            &personal
        }
        None => base,
    };
    let ranked = rank(&req.query, idx, model, req.method, req.mode)?.truncated(req.topk);
    let out = ranked
        .items
        .into_iter()
        .filter_map(|item| {
            let g: Gaussian2 = idx.get(&item.clip_id)?.reduced;
            Some(RetrievedClip {
                clip_id: item.clip_id,
                score: item.score,
                mean: g.mean(),
                cov: g.cov().to_array(),
            })
        })
        .collect();
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptDatum {
    theta: Option<Vec<f64>>,
    clip_id: Option<String>,
    e: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptRequest {
    user_id: String,
    data: Vec<AdaptDatum>,
    beta_mean: Option<f64>,
    beta_cov: Option<f64>,
    #[serde(default)]
    adapt_cov: bool,
    #[serde(default)]
    schedule: AdaptSchedule,
}

async fn adapt(State(st): State<AppState>, body: Result<Json<AdaptRequest>, JsonRejection>) -> ApiResult<serde_json::Value> {
    let Json(req) = body?;
    if req.user_id.is_empty() {
        return Err(ApiError::invalid("user_id must not be empty"));
    }
    // Hold the write lock across the whole update so two adaptations of
    // the same user cannot interleave.
    let mut guard = st.current.write().unwrap_or_else(|e| e.into_inner());
    let cur = guard.clone();
    let b = &cur.bundle;
    let mut data = Vec::with_capacity(req.data.len());
    for d in req.data {
        let (id, theta) = match (d.theta, d.clip_id) {
            (Some(t), None) => ("request".to_string(), t),
            (None, Some(c)) => {
                let t = clip_theta(b, &c)?;
                (c, t)
            }
            _ => return Err(ApiError::invalid("each datum needs exactly one of theta or clip_id")),
        };
        if !d.e[0].is_finite() || !d.e[1].is_finite() {
            return Err(ApiError::invalid("annotation must be finite"));
        }
        data.push(PersonalDatum {
            theta: TopicPosterior::new(id, theta)?,
            e: d.e,
        });
    }
    let d = AdaptConfig::default();
    let config = AdaptConfig {
        beta_mean: req.beta_mean.unwrap_or(d.beta_mean),
        beta_cov: req.beta_cov.unwrap_or(d.beta_cov),
        adapt_cov: req.adapt_cov,
    };
    let base = match req.schedule {
        AdaptSchedule::Online => b.model_for(Some(&req.user_id))?,
        AdaptSchedule::Cumulative => b.affective()?,
    };
    let result = map_adapt(base, &data, &config)?;
    let mut bundle = b.clone();
    bundle.adapted.insert(req.user_id.clone(), result.model);
    let version = cur.version + 1;
    *guard = Arc::new(Served { version, bundle });
    Ok(Json(json!({
        "model_version": version,
        "user_id": req.user_id,
        "occupancy": result.occupancy,
    })))
}

async fn clip(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let s = st.snapshot();
    let entry = indexed(&s.bundle)?
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("clip {id} is not indexed")))?;
    Ok(Json(json!({
        "clip_id": entry.clip_id,
        "theta": entry.theta,
        "mean": entry.reduced.mean(),
        "cov": entry.reduced.cov().to_array(),
        "metadata": entry.metadata,
        "model_version": s.version,
    })))
}
