//! JSON-over-HTTP routes.
//!
//! Request bodies and query strings are decoded through
//! `serde_path_to_error`, so schema violations come back as 422 with the
//! path of the offending field. Unknown ids are 404, a remedy that collides
//! with a running one on the same record is 409.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairlens_core::models::ModelKind;
use fairlens_core::remedy::SuggestConfig;
use fairlens_core::store::{RecordFilter, Store};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::error::{from_path_error, ApiError};
use crate::jobs::{JobQueue, JobStatus, JobView};
use crate::service::{
    ApiResult, ExplainRequest, RemedyRequest, SweepRequest, ThemisRequest, Workbench,
};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub port: u16,
    pub store_dir: PathBuf,
    /// Allowed CORS origins; empty or `*` allows any.
    pub cors_origins: Vec<String>,
    /// Jobs run concurrently.
    pub workers: usize,
    /// Seed used by requests that do not carry one.
    pub default_seed: u64,
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub wb: Workbench,
    pub jobs: JobQueue,
    pub default_seed: u64,
}

impl AppState {
    pub fn new(store: Store, workers: usize, default_seed: u64) -> Self {
        Self {
            wb: Workbench::new(store),
            jobs: JobQueue::new(workers),
            default_seed,
        }
    }
}

/// JSON body decoded with field paths in errors. An empty body reads as `{}`.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::invalid("", e.body_text()))?;
        let text: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
            b"{}"
        } else {
            &bytes
        };
        let de = &mut serde_json::Deserializer::from_slice(text);
        let value = serde_path_to_error::deserialize(&mut *de).map_err(from_path_error)?;
        de.end().map_err(|e| ApiError::invalid("", e.to_string()))?;
        Ok(JsonBody(value))
    }
}

/// Query string decoded with field paths in errors.
pub struct QueryParams<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for QueryParams<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        let q = parts.uri.query().unwrap_or("");
        let de = serde_urlencoded::Deserializer::new(form_urlencoded::parse(q.as_bytes()));
        serde_path_to_error::deserialize(de)
            .map(QueryParams)
            .map_err(from_path_error)
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker panicked: {e}")))?
}

fn to_value<T: Serialize>(v: &T) -> ApiResult<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| ApiError::Internal(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/bias", get(bias))
        .route("/datasets/{id}/features/{feature}/histogram", get(histogram))
        .route("/sweeps", get(list_sweeps).post(post_sweep))
        .route("/sweeps/{id}", get(get_sweep))
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/predictions", get(predictions))
        .route("/models/{id}/explain", post(explain))
        .route("/models/{id}/counterfactuals", get(counterfactuals))
        .route("/models/{id}/themis", post(post_themis))
        .route("/models/{id}/suggest-masks", post(suggest_masks))
        .route("/remedies", post(post_remedy))
        .route("/remedies/{id}", get(get_remedy))
        .route("/jobs/{id}", get(get_job))
        .fallback(|| async { ApiError::not_found("route", "") })
        .with_state(state)
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() || origins.iter().any(|o| o == "*") {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

/// The full application: routes plus CORS.
pub fn app(state: AppState, cors_origins: &[String]) -> Router {
    router(state).layer(cors(cors_origins))
}

/// Binds the port and serves until interrupted.
pub async fn serve(cfg: ServeConfig) -> std::io::Result<()> {
    let store = Store::open(&cfg.store_dir).map_err(std::io::Error::other)?;
    let state = AppState::new(store, cfg.workers, cfg.default_seed);
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, store = %cfg.store_dir.display(), "listening");
    axum::serve(listener, app(state, &cfg.cors_origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

// datasets

#[derive(Debug, Deserialize)]
struct SensitiveQuery {
    sensitive: String,
}

async fn list_datasets(State(s): State<AppState>) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.list_datasets()).await?).into_response())
}

async fn get_dataset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.dataset_info(&id)).await?).into_response())
}

async fn bias(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<SensitiveQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.bias(&id, &q.sensitive)).await?).into_response())
}

async fn histogram(
    State(s): State<AppState>,
    Path((id, feature)): Path<(String, String)>,
    QueryParams(q): QueryParams<SensitiveQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.histogram(&id, &feature, &q.sensitive)).await?).into_response())
}

// jobs

#[derive(Debug, Default, Deserialize)]
struct WaitQuery {
    #[serde(default)]
    wait: bool,
}

/// Answers a job submission: the ticket (202), or the finished job when the
/// caller asked to wait.
async fn job_response(s: &AppState, ticket: crate::jobs::JobTicket, wait: bool) -> Response {
    if !wait {
        return (StatusCode::ACCEPTED, Json(ticket)).into_response();
    }
    match s.jobs.wait(&ticket.job_id).await {
        Some(view) => Json(view).into_response(),
        None => ApiError::Internal("job vanished".into()).into_response(),
    }
}

async fn get_job(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<WaitQuery>,
) -> ApiResult<Response> {
    let view = if q.wait {
        s.jobs.wait(&id).await
    } else {
        s.jobs.get(&id)
    };
    if let Some(view) = view {
        return Ok(Json(view).into_response());
    }
    // Jobs from an earlier process are rebuilt from what they stored.
    let wb = s.wb.clone();
    let jid = id.clone();
    let stored = blocking(move || {
        if jid.starts_with("sweep-") {
            Ok(Some(("sweep", to_value(&wb.sweep(&jid)?)?)))
        } else if jid.starts_with("themis-") {
            Ok(Some(("themis", to_value(&wb.themis_run(&jid)?)?)))
        } else {
            Ok(None)
        }
    })
    .await;
    match stored {
        Ok(Some((kind, result))) => Ok(Json(JobView {
            job_id: id,
            kind: kind.into(),
            status: JobStatus::Done,
            result: Some(result),
            error: None,
        })
        .into_response()),
        Ok(None) | Err(ApiError::NotFound { .. }) => Err(ApiError::not_found("job", id)),
        Err(e) => Err(e),
    }
}

// sweeps

async fn list_sweeps(State(s): State<AppState>) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || Ok(wb.store().list_sweeps()?)).await?).into_response())
}

async fn post_sweep(
    State(s): State<AppState>,
    QueryParams(q): QueryParams<WaitQuery>,
    JsonBody(req): JsonBody<SweepRequest>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    let seed = s.default_seed;
    let config = blocking(move || wb.sweep_config(&req, seed)).await?;
    let wb = s.wb.clone();
    let id = config.sweep_id();
    let ticket = s
        .jobs
        .submit(&id, "sweep", move || to_value(&wb.run_sweep(&config)?));
    Ok(job_response(&s, ticket, q.wait).await)
}

async fn get_sweep(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.sweep(&id)).await?).into_response())
}

// models

#[derive(Debug, Default, Deserialize)]
struct ModelsQuery {
    dataset: Option<String>,
    kind: Option<ModelKind>,
    sensitive: Option<String>,
}

async fn list_models(
    State(s): State<AppState>,
    QueryParams(q): QueryParams<ModelsQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    let filter = RecordFilter {
        dataset: q.dataset,
        kind: q.kind,
        sensitive: q.sensitive,
    };
    Ok(Json(blocking(move || wb.list_models(&filter)).await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct DepthQuery {
    depth: Option<usize>,
}

async fn get_model(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<DepthQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.model(&id, q.depth)).await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct DatasetQuery {
    dataset: Option<String>,
}

async fn predictions(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<DatasetQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.predictions(&id, q.dataset.as_deref())).await?).into_response())
}

async fn explain(
    State(s): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<ExplainRequest>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    let seed = s.default_seed;
    Ok(Json(blocking(move || wb.explain(&id, &req, seed)).await?).into_response())
}

#[derive(Debug, Deserialize)]
struct CounterfactualQuery {
    #[serde(default = "default_k")]
    k: usize,
    seed: Option<u64>,
}

fn default_k() -> usize {
    15
}

async fn counterfactuals(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<CounterfactualQuery>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    let seed = q.seed.unwrap_or(s.default_seed);
    Ok(Json(blocking(move || wb.counterfactuals(&id, q.k, seed)).await?).into_response())
}

async fn post_themis(
    State(s): State<AppState>,
    Path(id): Path<String>,
    QueryParams(q): QueryParams<WaitQuery>,
    JsonBody(req): JsonBody<ThemisRequest>,
) -> ApiResult<Response> {
    let cfg = s.wb.themis_config(&req, s.default_seed);
    let wb = s.wb.clone();
    let (rid, c) = (id.clone(), cfg.clone());
    blocking(move || wb.check_themis(&rid, &c)).await?;
    let job_id = fairlens_core::audit::themis_id(&id, &cfg);
    let wb = s.wb.clone();
    let ticket = s
        .jobs
        .submit(&job_id, "themis", move || to_value(&wb.themis(&id, &cfg)?));
    Ok(job_response(&s, ticket, q.wait).await)
}

async fn suggest_masks(
    State(s): State<AppState>,
    Path(id): Path<String>,
    JsonBody(cfg): JsonBody<SuggestConfig>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.suggest_masks(&id, &cfg)).await?).into_response())
}

// remedies

async fn post_remedy(
    State(s): State<AppState>,
    JsonBody(req): JsonBody<RemedyRequest>,
) -> ApiResult<Response> {
    let wb = s.wb.clone();
    let seed = s.default_seed;
    Ok(Json(blocking(move || wb.remedy(&req, seed)).await?).into_response())
}

async fn get_remedy(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let wb = s.wb.clone();
    Ok(Json(blocking(move || wb.get_remedy(&id)).await?).into_response())
}
