use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use avd_core::features::{EmbedReply, EmbedRequest, EmbeddingProvider, ProviderOptions};
use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::pipeline::{AggregationRule, LoadError, LoadedModel, PredictError, DEFAULT_MAX_UPLOAD_BYTES};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_CORS_ORIGIN: &str = "http://localhost:5173";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub artifact_path: PathBuf,
    pub rule: AggregationRule,
    pub max_upload_bytes: usize,
    /// Exact origins, or `*` for any.
    pub cors_origins: Vec<String>,
    pub provider: ProviderOptions,
}

impl ServiceConfig {
    pub fn new(artifact_path: impl Into<PathBuf>) -> Self {
        Self {
            addr: DEFAULT_ADDR.parse().unwrap(),
            artifact_path: artifact_path.into(),
            rule: AggregationRule::Any,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            cors_origins: vec![DEFAULT_CORS_ORIGIN.to_string()],
            provider: ProviderOptions::default(),
        }
    }
}

enum Slot {
    Ready(Arc<LoadedModel>),
    Unavailable(String),
}

/// Shared service state. The model sits behind a lock that is only held to
/// clone or replace an `Arc`, so a reload never blocks in-flight requests.
pub struct AppState {
    slot: RwLock<Slot>,
    pub rule: AggregationRule,
    pub max_upload_bytes: usize,
    artifact_path: Option<PathBuf>,
    provider_opts: ProviderOptions,
}

impl AppState {
    pub fn with_model(model: LoadedModel, rule: AggregationRule, max_upload_bytes: usize) -> Arc<Self> {
        Arc::new(Self {
            slot: RwLock::new(Slot::Ready(Arc::new(model))),
            rule,
            max_upload_bytes,
            artifact_path: None,
            provider_opts: ProviderOptions::default(),
        })
    }

    /// Loads the configured artifact; a failure leaves the service up but
    /// reporting 503.
    pub fn from_config(cfg: &ServiceConfig) -> Arc<Self> {
        let slot = match LoadedModel::load(&cfg.artifact_path, &cfg.provider) {
            Ok(m) => Slot::Ready(Arc::new(m)),
            Err(e) => Slot::Unavailable(format!("{}: {e}", cfg.artifact_path.display())),
        };
        Arc::new(Self {
            slot: RwLock::new(slot),
            rule: cfg.rule,
            max_upload_bytes: cfg.max_upload_bytes,
            artifact_path: Some(cfg.artifact_path.clone()),
            provider_opts: cfg.provider.clone(),
        })
    }

    pub fn model(&self) -> Result<Arc<LoadedModel>, PredictError> {
        match &*self.slot.read().unwrap() {
            Slot::Ready(m) => Ok(Arc::clone(m)),
            Slot::Unavailable(why) => Err(PredictError::ModelUnavailable(why.clone())),
        }
    }

    /// Swaps in a freshly loaded artifact. On failure the current model is
    /// kept.
    pub fn reload(&self, path: Option<&Path>) -> Result<String, LoadError> {
        let path = path
            .or(self.artifact_path.as_deref())
            .ok_or_else(|| LoadError::Store(std::io::Error::other("no artifact path configured").into()))?;
        let model = LoadedModel::load(path, &self.provider_opts)?;
        let id = model.model_id.clone();
        *self.slot.write().unwrap() = Slot::Ready(Arc::new(model));
        Ok(id)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error_code: &'a str,
    message: String,
}

pub(crate) fn error_response(err: &PredictError) -> Response {
    let status = StatusCode::from_u16(err.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = ErrorBody {
        error_code: err.code(),
        message: err.to_string(),
    };
    (status, Json(body)).into_response()
}

struct ApiError(PredictError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        error_response(&self.0)
    }
}

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        Self(e)
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_id: Option<String>,
    format_version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_code: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match state.model() {
        Ok(m) => Json(Health {
            status: "ok",
            model_id: Some(m.model_id.clone()),
            format_version: Some(m.artifact.format_version),
            error_code: None,
            message: None,
        })
        .into_response(),
        Err(e) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "unavailable",
                model_id: None,
                format_version: None,
                error_code: Some(e.code()),
                message: Some(e.to_string()),
            }),
        )
            .into_response(),
    }
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let m = state.model()?;
    Ok(Json(m.info()).into_response())
}

fn too_large(size: usize, limit: usize) -> PredictError {
    PredictError::PayloadTooLarge { size, limit }
}

/// Reads a body or multipart field, stopping as soon as `limit` is passed.
async fn read_limited(mut body: Body, limit: usize) -> Result<Bytes, PredictError> {
    let mut buf = Vec::new();
    while let Some(frame) = body.frame().await {
        let frame = frame.map_err(|e| PredictError::BadRequest(format!("reading body: {e}")))?;
        if let Ok(data) = frame.into_data() {
            buf.extend_from_slice(&data);
            if buf.len() > limit {
                return Err(too_large(buf.len(), limit));
            }
        }
    }
    Ok(buf.into())
}

async fn upload_bytes(req: Request, limit: usize) -> Result<Bytes, PredictError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    if let Some(len) = req
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Multipart framing adds a little overhead around the file itself.
        let slack = if content_type.starts_with("multipart/") { 64 * 1024 } else { 0 };
        if len > limit.saturating_add(slack) {
            return Err(too_large(len, limit));
        }
    }

    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| PredictError::BadRequest(e.body_text()))?;
        while let Some(mut field) = form
            .next_field()
            .await
            .map_err(|e| PredictError::BadRequest(e.body_text()))?
        {
            if field.name() != Some("audio") {
                continue;
            }
            let mut buf = Vec::new();
            while let Some(chunk) = field
                .chunk()
                .await
                .map_err(|e| PredictError::BadRequest(e.body_text()))?
            {
                buf.extend_from_slice(&chunk);
                if buf.len() > limit {
                    return Err(too_large(buf.len(), limit));
                }
            }
            return Ok(buf.into());
        }
        Err(PredictError::BadRequest("multipart body has no \"audio\" field".into()))
    } else if content_type.is_empty()
        || content_type.starts_with("audio/")
        || content_type.starts_with("application/octet-stream")
    {
        read_limited(req.into_body(), limit).await
    } else {
        Err(PredictError::BadRequest(format!(
            "unsupported content type {content_type:?}; send multipart field \"audio\" or audio/wav"
        )))
    }
}

async fn predict(
    State(state): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
    req: Request,
) -> Result<Response, ApiError> {
    let rule = match query.get("rule") {
        Some(r) => r.parse().map_err(PredictError::BadRequest)?,
        None => state.rule,
    };
    let model = state.model()?;
    let bytes = upload_bytes(req, state.max_upload_bytes).await?;
    let limit = state.max_upload_bytes;
    let response = tokio::task::spawn_blocking(move || model.predict_wav(&bytes, rule, limit))
        .await
        .map_err(|e| PredictError::BadRequest(format!("worker failed: {e}")))??;
    Ok(Json(response).into_response())
}

fn cors(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        return base.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    base.allow_origin(AllowOrigin::list(list))
}

/// The prediction API: `GET /health`, `GET /model`, `POST /predict`.
pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::disable())
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Serves `POST /embed` for a provider, speaking the external-provider wire
/// format.
pub fn embed_router(provider: Arc<dyn EmbeddingProvider>) -> Router {
    Router::new()
        .route(
            "/embed",
            post(|State(p): State<Arc<dyn EmbeddingProvider>>, Json(req): Json<EmbedRequest>| async move {
                let reply = tokio::task::spawn_blocking(move || EmbedReply::answer(p.as_ref(), &req))
                    .await
                    .unwrap_or_else(|e| EmbedReply::Error { error: e.to_string() });
                let status = match reply {
                    EmbedReply::Error { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                    _ => StatusCode::OK,
                };
                (status, Json(reply))
            }),
        )
        .layer(DefaultBodyLimit::max(DEFAULT_MAX_UPLOAD_BYTES))
        .with_state(provider)
}

/// Serves [`embed_router`] on `listener` until SIGINT or SIGTERM.
pub async fn serve_embed(listener: tokio::net::TcpListener, provider: Arc<dyn EmbeddingProvider>) -> std::io::Result<()> {
    axum::serve(listener, embed_router(provider))
        .with_graceful_shutdown(shutdown_signal())
        .await
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot load model: {0}")]
    Load(#[from] LoadError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

#[cfg(unix)]
fn reload_on_sighup(state: Arc<AppState>) {
    tokio::spawn(async move {
        let Ok(mut hup) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup()) else {
            return;
        };
        while hup.recv().await.is_some() {
            let st = Arc::clone(&state);
            match tokio::task::spawn_blocking(move || st.reload(None)).await {
                Ok(Ok(id)) => tracing::info!(model_id = %id, "artifact reloaded"),
                Ok(Err(e)) => tracing::warn!("reload failed, keeping current model: {e}"),
                Err(e) => tracing::warn!("reload task failed: {e}"),
            }
        }
    });
}

/// Loads the artifact (failing fast if it cannot be read), binds and serves
/// until SIGINT or SIGTERM. SIGHUP reloads the artifact in place. `on_bound`
/// receives the actual listening address.
pub async fn serve(cfg: ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let model = LoadedModel::load(&cfg.artifact_path, &cfg.provider)?;
    tracing::info!(model_id = %model.model_id, provider = %model.artifact.provider.provider_id, "model loaded");
    let state = Arc::new(AppState {
        slot: RwLock::new(Slot::Ready(Arc::new(model))),
        rule: cfg.rule,
        max_upload_bytes: cfg.max_upload_bytes,
        artifact_path: Some(cfg.artifact_path.clone()),
        provider_opts: cfg.provider.clone(),
    });
    #[cfg(unix)]
    reload_on_sighup(Arc::clone(&state));
    let app = router(state, &cfg.cors_origins);
    let listener = tokio::net::TcpListener::bind(cfg.addr)
        .await
        .map_err(|source| ServeError::Bind { addr: cfg.addr, source })?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}
