//! HTTP front end for trained model bundles.
//!
//! Clients send patients in clinical units; the service scales them with the
//! bundle's scaler, runs the optimizer and returns results in both clinical
//! and normalized units. Only bundles are stored.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fluidrec::bundle::{ModelBundle, RawRecommendRequest, RawSweepRequest};
use fluidrec::invclass::OptimizeConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BODY_LIMIT: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("bundle `{0}` not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl From<fluidrec::Error> for ApiError {
    fn from(e: fluidrec::Error) -> Self {
        use fluidrec::Error as E;
        match e {
            E::NonFiniteInput { .. } | E::NonFiniteGradient { .. } => ApiError::Unprocessable(e.to_string()),
            E::Io(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

/// Bundles by id, optionally mirrored to `<dir>/<id>.json`.
pub struct Registry {
    bundles: RwLock<BTreeMap<String, Arc<ModelBundle>>>,
    dir: Option<PathBuf>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry {
            bundles: RwLock::new(BTreeMap::new()),
            dir: None,
        }
    }

    /// Opens (creating if needed) a persistence directory and loads every
    /// bundle already stored there.
    pub fn persistent(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut bundles = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            match ModelBundle::from_json(&text) {
                Ok(b) => {
                    let id =
                        b.id.clone()
                            .unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
                    bundles.insert(id, Arc::new(b));
                }
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(Registry {
            bundles: RwLock::new(bundles),
            dir: Some(dir),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<ModelBundle>> {
        self.bundles.read().expect("registry lock").get(id).cloned()
    }

    pub fn list(&self) -> Vec<Arc<ModelBundle>> {
        self.bundles.read().expect("registry lock").values().cloned().collect()
    }

    pub fn insert(&self, mut bundle: ModelBundle) -> io::Result<String> {
        let id = uuid::Uuid::new_v4().to_string();
        bundle.id = Some(id.clone());
        if bundle.metadata.created_at.is_none() {
            bundle.metadata.created_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        }
        let mut map = self.bundles.write().expect("registry lock");
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{id}.json.tmp"));
            let text = bundle.to_json().map_err(io::Error::other)?;
            fs::write(&tmp, text)?;
            fs::rename(&tmp, dir.join(format!("{id}.json")))?;
        }
        map.insert(id.clone(), Arc::new(bundle));
        Ok(id)
    }

    pub fn remove(&self, id: &str) -> io::Result<bool> {
        let mut map = self.bundles.write().expect("registry lock");
        if map.remove(id).is_none() {
            return Ok(false);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{id}.json"));
            if path.exists() {
                fs::remove_file(path)?;
            }
        }
        Ok(true)
    }
}

pub struct AppState {
    pub registry: Registry,
    pub optimize: OptimizeConfig,
}

impl AppState {
    pub fn new(registry: Registry) -> Arc<Self> {
        Arc::new(AppState {
            registry,
            optimize: OptimizeConfig::default(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    router_with_limit(state, DEFAULT_BODY_LIMIT)
}

pub fn router_with_limit(state: Arc<AppState>, body_limit: usize) -> Router {
    Router::new()
        .route("/bundles", post(create_bundle).get(list_bundles))
        .route("/bundles/{id}", get(get_bundle).delete(delete_bundle))
        .route("/bundles/{id}/recommend", post(recommend))
        .route("/bundles/{id}/sweep", post(sweep))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        // JSON cannot spell NaN or infinity; an overflowing literal is the
        // only way a non-finite number arrives
        if e.to_string().contains("number out of range") {
            ApiError::Unprocessable(format!("non-finite number in body: {e}"))
        } else {
            ApiError::BadRequest(format!("invalid JSON body: {e}"))
        }
    })
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

async fn create_bundle(State(st): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let bundle: ModelBundle = parse(&body)?;
    bundle.validate()?;
    let id = st.registry.insert(bundle).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list_bundles(State(st): State<Arc<AppState>>) -> Json<Vec<fluidrec::bundle::BundleSummary>> {
    Json(st.registry.list().iter().map(|b| b.summary()).collect())
}

#[derive(Deserialize, Default)]
struct Flags {
    full: Option<String>,
    verbose: Option<String>,
}

fn flag(v: &Option<String>) -> bool {
    matches!(v.as_deref(), Some("1" | "true" | "yes"))
}

fn lookup(st: &AppState, id: &str) -> Result<Arc<ModelBundle>, ApiError> {
    st.registry.get(id).ok_or_else(|| ApiError::NotFound(id.to_string()))
}

async fn get_bundle(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<Flags>) -> Result<Response, ApiError> {
    let b = lookup(&st, &id)?;
    if flag(&q.full) {
        Ok(Json(b.as_ref().clone()).into_response())
    } else {
        Ok(Json(b.summary()).into_response())
    }
}

async fn delete_bundle(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    match st.registry.remove(&id) {
        Ok(true) => Ok(StatusCode::NO_CONTENT),
        Ok(false) => Err(ApiError::NotFound(id)),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn recommend(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<Flags>,
    body: Bytes,
) -> Result<Json<fluidrec::bundle::RawRecommendation>, ApiError> {
    let b = lookup(&st, &id)?;
    let req: RawRecommendRequest = parse(&body)?;
    let cfg = st.optimize.clone();
    let mut out = blocking(move || Ok(b.recommend_raw(&req, &cfg)?)).await?;
    if !flag(&q.verbose) {
        out.normalized.trajectory.clear();
    }
    Ok(Json(out))
}

async fn sweep(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<fluidrec::bundle::RawSweep>, ApiError> {
    let b = lookup(&st, &id)?;
    let req: RawSweepRequest = parse(&body)?;
    let cfg = st.optimize.clone();
    Ok(Json(blocking(move || Ok(b.sweep_raw(&req, &cfg)?)).await?))
}

/// Binds `host:port` and serves until Ctrl-C.
pub async fn serve(host: &str, port: u16, state: Arc<AppState>) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
