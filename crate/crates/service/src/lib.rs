//! Read-only HTTP API over an immutable model snapshot.
//!
//! Handlers clone an `Arc` of the current snapshot and never mutate it; a
//! reload builds a fresh snapshot and swaps the pointer, so a request sees
//! either the old model or the new one, never a mix.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use hs_assist::corpus::{HsCode, HsLevel, KnowledgeBase, Manual};
use hs_assist::encoder::{load_artifact, ModelArtifact};
use hs_assist::report::{build_report_with, ReportOptions, SuggestionReport};
use hs_assist::retrieval::{RetrievalConfig, Retriever};

pub const MAX_K: usize = 10;
pub const MAX_SENTENCES: usize = 50;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_SENTENCES: usize = 7;
pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";

/// A loaded model with its manual and knowledge base.
#[derive(Debug)]
pub struct Snapshot {
    pub model: ModelArtifact,
    pub manual: Manual,
    pub kb: KnowledgeBase,
    pub retrieval: RetrievalConfig,
}

impl Snapshot {
    pub fn new(model: ModelArtifact, manual: Manual, kb: KnowledgeBase) -> Self {
        Self {
            model,
            manual,
            kb,
            retrieval: RetrievalConfig::default(),
        }
    }

    /// Loads an artifact that bundles its manual and knowledge base.
    pub fn load(path: &Path) -> hs_assist::Result<Self> {
        let (model, resources) = load_artifact(path)?;
        let resources = resources.ok_or_else(|| {
            hs_assist::Error::Artifact(format!("{} has no bundled manual and knowledge base", path.display()))
        })?;
        Ok(Self::new(model, resources.manual, resources.kb))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub model_path: Option<PathBuf>,
    pub bind_addr: Option<String>,
    pub cors_origin: Option<String>,
    pub admin_token: Option<String>,
}

impl ServiceConfig {
    /// Reads `HS_ASSIST_MODEL_PATH`, `HS_ASSIST_BIND_ADDR`,
    /// `HS_ASSIST_CORS_ORIGIN` and `HS_ASSIST_ADMIN_TOKEN`.
    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        Self {
            model_path: var("HS_ASSIST_MODEL_PATH").map(PathBuf::from),
            bind_addr: var("HS_ASSIST_BIND_ADDR"),
            cors_origin: var("HS_ASSIST_CORS_ORIGIN"),
            admin_token: var("HS_ASSIST_ADMIN_TOKEN"),
        }
    }
}

pub struct AppState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    model_path: Option<PathBuf>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(snapshot: Option<Snapshot>, model_path: Option<PathBuf>, admin_token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            snapshot: RwLock::new(snapshot.map(Arc::new)),
            model_path,
            admin_token,
        })
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn swap(&self, snapshot: Snapshot) -> Option<Arc<Snapshot>> {
        let mut guard = self.snapshot.write().unwrap_or_else(|e| e.into_inner());
        guard.replace(Arc::new(snapshot))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
            },
        }
    }

    fn not_loaded() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "MODEL_NOT_LOADED",
            "no model is loaded",
        )
    }
}

impl From<hs_assist::Error> for ApiError {
    fn from(e: hs_assist::Error) -> Self {
        use hs_assist::Error as E;
        let status = match e {
            E::EmptyDescription | E::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::UnknownHeading(_) => StatusCode::NOT_FOUND,
            E::InvalidCode { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub description: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub n_sentences: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

/// The request as resolved against defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub description: String,
    pub k: usize,
    pub n_sentences: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub report: SuggestionReport,
    pub request: RequestEcho,
    pub latency_ms: f64,
}

fn resolve(req: ClassifyRequest, defaults: &RetrievalConfig) -> Result<RequestEcho, ApiError> {
    let unprocessable = |code, msg: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, msg);
    if req.description.trim().is_empty() {
        return Err(unprocessable("EMPTY_DESCRIPTION", "description is empty".into()));
    }
    let k = req.k.unwrap_or(DEFAULT_K);
    if !(1..=MAX_K).contains(&k) {
        return Err(unprocessable(
            "K_OUT_OF_RANGE",
            format!("k must be in 1..={MAX_K}, got {k}"),
        ));
    }
    let n = req.n_sentences.unwrap_or(DEFAULT_SENTENCES);
    if !(1..=MAX_SENTENCES).contains(&n) {
        return Err(unprocessable(
            "N_OUT_OF_RANGE",
            format!("n_sentences must be in 1..={MAX_SENTENCES}, got {n}"),
        ));
    }
    let lambda = req.lambda.unwrap_or(defaults.lambda);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(unprocessable(
            "LAMBDA_OUT_OF_RANGE",
            format!("lambda must be finite and non-negative, got {lambda}"),
        ));
    }
    Ok(RequestEcho {
        description: req.description,
        k,
        n_sentences: n,
        lambda,
    })
}

fn classify_with(snapshot: &Snapshot, echo: &RequestEcho) -> Result<SuggestionReport, ApiError> {
    let options = ReportOptions {
        k: echo.k,
        retrieval: RetrievalConfig {
            lambda: echo.lambda,
            n_sentences: echo.n_sentences,
            ..snapshot.retrieval.clone()
        },
        generated_at: Utc::now(),
    };
    let retriever = Retriever::new(&snapshot.model, &snapshot.manual, &snapshot.kb);
    Ok(build_report_with(&retriever, &echo.description, &options)?)
}

async fn classify(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let started = Instant::now();
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MALFORMED_REQUEST", e.body_text()))?;
    let snapshot = state.snapshot().ok_or_else(ApiError::not_loaded)?;
    let echo = resolve(req, &snapshot.retrieval)?;
    let (report, echo) = tokio::task::spawn_blocking(move || classify_with(&snapshot, &echo).map(|r| (r, echo)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))??;
    Ok(Json(ClassifyResponse {
        report,
        request: echo,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub sid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualView {
    pub heading: String,
    pub title: String,
    pub sentences: Vec<SentenceView>,
    pub subheadings: std::collections::BTreeMap<String, String>,
}

async fn manual_heading(
    State(state): State<Arc<AppState>>,
    UrlPath(heading): UrlPath<String>,
) -> Result<Json<ManualView>, ApiError> {
    let code = HsCode::parse_at(&heading, HsLevel::Heading)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MALFORMED_HEADING", e.to_string()))?;
    let snapshot = state.snapshot().ok_or_else(ApiError::not_loaded)?;
    let manual = snapshot.manual.get(&code).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "UNKNOWN_HEADING",
            format!("heading {code} is not in the manual"),
        )
    })?;
    Ok(Json(ManualView {
        heading: code.to_string(),
        title: manual.title().to_owned(),
        sentences: manual
            .sentences()
            .iter()
            .map(|s| SentenceView {
                sid: s.sid.to_string(),
                text: s.text.clone(),
            })
            .collect(),
        subheadings: manual
            .subheading_oneliners()
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: String,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub k_case: usize,
    pub n_sentences: usize,
    pub manual_headings: usize,
    pub kb_entries: usize,
}

async fn model_info(State(state): State<Arc<AppState>>) -> Result<Json<ModelInfo>, ApiError> {
    let s = state.snapshot().ok_or_else(ApiError::not_loaded)?;
    Ok(Json(ModelInfo {
        version: s.model.version().to_owned(),
        num_labels: s.model.num_labels(),
        vocab_size: s.model.vocab().len(),
        dim: s.model.dim(),
        temperature: s.model.temperature(),
        lambda: s.retrieval.lambda,
        k_case: s.retrieval.k_case,
        n_sentences: s.retrieval.n_sentences,
        manual_headings: s.manual.len(),
        kb_entries: s.kb.len(),
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.snapshot().ok_or_else(ApiError::not_loaded)?;
    Ok(Json(
        serde_json::json!({ "status": "ok", "model_version": s.model.version() }),
    ))
}

async fn reload(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<Json<serde_json::Value>, ApiError> {
    let Some(expected) = state.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "RELOAD_DISABLED",
            "no admin token is configured",
        ));
    };
    let given = headers.get(ADMIN_TOKEN_HEADER).and_then(|v| v.to_str().ok());
    if given != Some(expected) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "UNAUTHORIZED",
            "missing or wrong admin token",
        ));
    }
    let Some(path) = state.model_path.clone() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "NO_MODEL_PATH",
            "no model path is configured",
        ));
    };
    let snapshot = tokio::task::spawn_blocking(move || Snapshot::load(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RELOAD_FAILED", e.to_string()))?;
    let version = snapshot.model.version().to_owned();
    let previous = state.swap(snapshot);
    tracing::info!(%version, "model reloaded");
    Ok(Json(serde_json::json!({
        "model_version": version,
        "previous_version": previous.map(|p| p.model.version().to_owned()),
    })))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint")
}

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => cors.allow_origin(origin),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/api/v1/classify", post(classify))
        .route("/api/v1/manual/{heading}", get(manual_heading))
        .route("/api/v1/model/info", get(model_info))
        .route("/api/v1/health", get(health))
        .route("/api/v1/admin/reload", post(reload))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

/// Loads the configured model (if any) and serves until interrupted.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let snapshot = match &config.model_path {
        Some(path) => match Snapshot::load(path) {
            Ok(s) => Some(s),
            Err(e) => {
                tracing::error!(path = %path.display(), error = %e, "model not loaded");
                None
            }
        },
        None => None,
    };
    let state = AppState::new(snapshot, config.model_path.clone(), config.admin_token.clone());
    let app = router(state, config.cors_origin.as_deref());
    let addr = config.bind_addr.as_deref().unwrap_or(DEFAULT_BIND_ADDR);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local: SocketAddr = listener.local_addr()?;
    tracing::info!(%local, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
