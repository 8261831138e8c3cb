//! HTTP service: one immutable snapshot per user, swapped atomically after
//! each write.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Query as Params, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use egomem_core::profile::{ProfileParams, DEFAULT_MIN_FREQUENCY, DEFAULT_THETA_CLUSTER};
use egomem_core::retrieval::IndexedStore;
use egomem_core::{MemoryStore, ProviderConfig, ProviderMode, Providers};
use serde::Deserialize;
use serde_json::json;

use crate::app::{self, QueryRequest};
use crate::error::AppError;

pub struct ServiceState {
    dir: PathBuf,
    config: ProviderConfig,
    providers: Mutex<BTreeMap<usize, Providers>>,
    snapshots: RwLock<BTreeMap<String, Arc<IndexedStore>>>,
    writers: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<()>>>>,
    started_at: i64,
}

fn valid_user_id(user: &str) -> Result<(), AppError> {
    let ok = !user.is_empty() && user.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !user.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(AppError::BadInput(format!("user id `{user}` must be ASCII letters, digits, '-', '_' or '.'")))
    }
}

impl ServiceState {
    /// Load every `*.json` store in `dir`.
    pub fn open(dir: &Path, config: ProviderConfig) -> Result<Self, AppError> {
        config.validate()?;
        let mut snapshots = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|x| x == "json")) {
            let store = MemoryStore::load(&path)?;
            let expected = format!("{}.json", store.user_id());
            if path.file_name().is_none_or(|n| n != expected.as_str()) {
                tracing::warn!(path = %path.display(), user = store.user_id(), "store file name does not match its user id; writes go to {expected}");
            }
            tracing::info!(user = store.user_id(), events = store.graph().events().len(), "loaded store");
            snapshots.insert(store.user_id().to_string(), Arc::new(IndexedStore::new(store)?));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            providers: Mutex::new(BTreeMap::new()),
            snapshots: RwLock::new(snapshots),
            writers: Mutex::new(BTreeMap::new()),
            started_at: chrono_now(),
        })
    }

    pub fn users(&self) -> Vec<String> {
        self.snapshots.read().expect("snapshot lock").keys().cloned().collect()
    }

    pub fn snapshot(&self, user: &str) -> Result<Arc<IndexedStore>, AppError> {
        self.snapshots.read().expect("snapshot lock").get(user).cloned().ok_or_else(|| AppError::NotFound(format!("unknown user `{user}`")))
    }

    fn providers(&self, store: Option<&MemoryStore>) -> Result<Providers, AppError> {
        let dim = store.and_then(MemoryStore::dimension).unwrap_or(self.config.embed_dimension);
        let mut cache = self.providers.lock().expect("provider lock");
        if let Some(p) = cache.get(&dim) {
            return Ok(p.clone());
        }
        let p = Providers::from_config(&self.config.clone().with_dimension(dim))?;
        cache.insert(dim, p.clone());
        Ok(p)
    }

    fn writer(&self, user: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.writers.lock().expect("writer lock").entry(user.to_string()).or_default().clone()
    }

    /// Persist, then make the new snapshot visible to readers.
    fn publish(&self, store: MemoryStore) -> Result<(), AppError> {
        let user = store.user_id().to_string();
        store.save(self.dir.join(format!("{user}.json")))?;
        let indexed = Arc::new(IndexedStore::new(store)?);
        self.snapshots.write().expect("snapshot lock").insert(user, indexed);
        Ok(())
    }
}

fn chrono_now() -> i64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

pub struct ApiError(AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AppError::Usage(_) | AppError::BadInput(_) => StatusCode::BAD_REQUEST,
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Invariant(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AppError::Provider(_) => StatusCode::SERVICE_UNAVAILABLE,
            AppError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.0.to_string() });
        if matches!(self.0, AppError::Provider(_)) {
            body["note"] = json!("the remote provider is unavailable; set EGOSELF_PROVIDER=offline to serve with the offline embedder");
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, AppError> + Send + 'static) -> Result<T, AppError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| AppError::Invariant(format!("worker failed: {e}")))?
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    Json(json!({ "status": "ok", "users": state.users().len(), "started_at": state.started_at })).into_response()
}

async fn post_events(State(state): State<Arc<ServiceState>>, body: String) -> ApiResult {
    let records = app::parse_records(&body)?;
    let user = app::batch_user(&records)?;
    valid_user_id(&user)?;
    let writer = state.writer(&user);
    let _guard = writer.lock().await;
    let current = match state.snapshot(&user) {
        Ok(s) => s.store().clone(),
        Err(_) => MemoryStore::new(&user),
    };
    let report = blocking({
        let state = state.clone();
        move || {
            let providers = state.providers(Some(&current))?;
            let (next, report) = app::ingest(&current, records, &providers)?;
            state.publish(next)?;
            Ok(report)
        }
    })
    .await?;
    Ok(Json(report).into_response())
}

async fn post_query(State(state): State<Arc<ServiceState>>, body: String) -> ApiResult {
    let request: QueryRequest = serde_json::from_str(&body).map_err(|e| AppError::BadInput(format!("malformed query body: {e}")))?;
    let snapshot = state.snapshot(&request.user_id)?;
    let result = blocking(move || {
        let providers = state.providers(Some(snapshot.store()))?;
        app::query(&snapshot, &request, &providers)
    })
    .await?;
    Ok(json_text(result.to_json()))
}

#[derive(Debug, Deserialize)]
struct UserParams {
    user: String,
    min_freq: Option<usize>,
    theta: Option<f64>,
}

async fn get_profile(State(state): State<Arc<ServiceState>>, Params(p): Params<UserParams>) -> ApiResult {
    let snapshot = state.snapshot(&p.user)?;
    let profile = snapshot.store().profile();
    Ok(Json(json!({
        "user_id": p.user,
        "profile": profile,
        "rendered": profile.map(|p| p.render()).unwrap_or_default(),
    }))
    .into_response())
}

async fn rebuild_profile(State(state): State<Arc<ServiceState>>, Params(p): Params<UserParams>) -> ApiResult {
    let writer = state.writer(&p.user);
    let _guard = writer.lock().await;
    let snapshot = state.snapshot(&p.user)?;
    let params = ProfileParams {
        theta_cluster: p.theta.unwrap_or(DEFAULT_THETA_CLUSTER),
        f_min: p.min_freq.unwrap_or(DEFAULT_MIN_FREQUENCY),
    };
    let built = blocking(move || {
        let providers = state.providers(Some(snapshot.store()))?;
        let (next, built) = app::rebuild_profile(snapshot.store(), params, &providers)?;
        state.publish(next)?;
        Ok(built)
    })
    .await?;
    Ok(Json(json!({ "profile": built.profile, "warnings": built.warnings })).into_response())
}

async fn get_stats(State(state): State<Arc<ServiceState>>, Params(p): Params<UserParams>) -> ApiResult {
    let snapshot = state.snapshot(&p.user)?;
    Ok(Json(app::stats(snapshot.store())).into_response())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/events", post(post_events))
        .route("/v1/query", post(post_query))
        .route("/v1/profile", get(get_profile))
        .route("/v1/profile/rebuild", post(rebuild_profile))
        .route("/v1/stats", get(get_stats))
        .with_state(state)
}

pub fn serve_blocking(dir: &Path, host: &str, port: u16) -> Result<(), AppError> {
    let config = ProviderConfig::from_env()?;
    if config.mode == ProviderMode::Offline {
        tracing::info!("using offline providers");
    }
    let state = Arc::new(ServiceState::open(dir, config)?);
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| AppError::Usage(format!("invalid address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| AppError::io("<runtime>", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| AppError::io(format!("{addr}"), e))?;
        tracing::info!(%addr, users = state.users().len(), "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| AppError::io(format!("{addr}"), e))
    })
}
