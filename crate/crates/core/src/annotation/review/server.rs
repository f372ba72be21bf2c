//! HTTP JSON API over a [`ReviewStore`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::store::{ReviewError, ReviewStore, SampleFilter, VerdictRequest};
use crate::annotation::overlay::{render_grayscale_overlay, DEFAULT_DIM_FACTOR};
use crate::data_model::{load_image, load_saliency_map, ScenarioCategory, Source, Verification};

pub const REVIEWER_HEADER: &str = "x-reviewer";

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::VersionConflict { .. } | ReviewError::InvalidTransition { .. } => StatusCode::CONFLICT,
            ReviewError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Persist(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Clone)]
struct AppState {
    store: Arc<ReviewStore>,
    dim_factor: f64,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<Verification>,
    scenario: Option<ScenarioCategory>,
    source: Option<Source>,
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ReopenRequest {
    version: u64,
    #[serde(default)]
    reason: Option<String>,
    #[serde(default)]
    reviewer: Option<String>,
}

fn reviewer(headers: &HeaderMap, body: Option<&str>) -> String {
    headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| body.map(str::to_string))
        .unwrap_or_default()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", e.to_string()))
}

async fn list_samples(
    State(st): State<AppState>,
    q: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", e.body_text()))?;
    let filter = SampleFilter {
        status: q.status,
        scenario: q.scenario,
        source: q.source,
    };
    Ok(Json(st.store.list(&filter, q.page.unwrap_or(1), q.page_size.unwrap_or(20))).into_response())
}

async fn get_sample(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(st.store.get(&id)?).into_response())
}

async fn post_verdict(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let req: VerdictRequest = parse_body(&body)?;
    let who = reviewer(&headers, req.reviewer.as_deref());
    Ok(Json(st.store.submit(&id, &req, &who)?).into_response())
}

async fn post_reopen(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let req: ReopenRequest = parse_body(&body)?;
    let who = reviewer(&headers, req.reviewer.as_deref());
    Ok(Json(st.store.reopen(&id, req.version, &who, req.reason)?).into_response())
}

async fn stats(State(st): State<AppState>) -> Response {
    Json(st.store.stats()).into_response()
}

async fn image_png(st: AppState, id: String, overlay: bool) -> Result<Response, ApiError> {
    let record = st.store.record(&id)?;
    let root = st.store.data_root().to_path_buf();
    let dim = st.dim_factor;
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, String> {
        let image = load_image(root.join(&record.frame_path)).map_err(|e| e.to_string())?;
        if !overlay {
            return image.to_png().map_err(|e| e.to_string());
        }
        let mut map = load_saliency_map(root.join(&record.map_path)).map_err(|e| e.to_string())?;
        if map.shape() != (image.height(), image.width()) {
            map = map.resize(image.height(), image.width());
        }
        let out = render_grayscale_overlay(&image, &map, dim).map_err(|e| e.to_string())?;
        out.to_png().map_err(|e| e.to_string())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "image_unavailable", e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn overlay_png(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    image_png(st, id, true).await
}

async fn frame_png(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    image_png(st, id, false).await
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Builds the review router. When `static_dir` is given, other paths serve files from it.
pub fn router(store: Arc<ReviewStore>, static_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        store,
        dim_factor: DEFAULT_DIM_FACTOR,
    };
    let api = Router::new()
        .route("/api/samples", get(list_samples))
        .route("/api/samples/{id}", get(get_sample))
        .route("/api/samples/{id}/overlay.png", get(overlay_png))
        .route("/api/samples/{id}/frame.png", get(frame_png))
        .route("/api/samples/{id}/verdict", post(post_verdict))
        .route("/api/samples/{id}/reopen", post(post_reopen))
        .route("/api/stats", get(stats))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(store: Arc<ReviewStore>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server running on its own thread, for tests and embedding. Dropping it shuts
/// the server down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(store: Arc<ReviewStore>, static_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(store, static_dir);
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
