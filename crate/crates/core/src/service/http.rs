//! HTTP API over [`Engine`].

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::engine::{ClickRequest, Engine, Orbit, ParamsPatch, SegmentRequest};
use super::overlay::Overlay;
use super::session::BakeMode;
use crate::error::Error;

pub const DEFAULT_ATLAS_SIZE: u32 = 512;

/// Error response with a JSON `{error}` body.
#[derive(Debug)]
pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownSession(_) => StatusCode::NOT_FOUND,
        Error::Busy(_) => StatusCode::CONFLICT,
        Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::invalid(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError(Error::invalid(format!("request body: {e}"))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    asset_id: String,
    #[serde(default)]
    config: Option<serde_json::Value>,
}

async fn create_session(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError(Error::invalid(format!("request body: {e}"))))?;
    let session = blocking(move || engine.create_session(&req.asset_id, req.config.as_ref())).await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": session.id}))).into_response())
}

async fn session_of(engine: &Arc<Engine>, id: String) -> ApiResult<Arc<super::engine::LiveSession>> {
    let engine = engine.clone();
    blocking(move || engine.session(&id)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewQuery {
    yaw: Option<f64>,
    pitch: Option<f64>,
    dist: Option<f64>,
    size: Option<u32>,
    overlay: Option<String>,
    group: Option<usize>,
}

async fn view(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    let overlay: Overlay = q.overlay.as_deref().unwrap_or("none").parse()?;
    let orbit = Orbit {
        yaw: q.yaw,
        pitch: q.pitch,
        dist: q.dist,
        size: q.size,
    };
    let png = blocking(move || session.frame(&orbit, overlay, q.group)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn click(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    let req: ClickRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError(Error::invalid(format!("request body: {e}"))))?;
    let pending = session.begin_click(&req)?;
    let worker = session.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = worker.run_click(pending) {
            log::warn!("selection in session {} failed: {e}", worker.id);
        }
    });
    Ok((StatusCode::ACCEPTED, Json(session.status())).into_response())
}

async fn status(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    Ok(Json(session.status()).into_response())
}

async fn set_params(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    let started = Instant::now();
    let patch: ParamsPatch = json_body(&body)?;
    let params = session.set_params(&patch)?;
    if let Err(e) = session.persist() {
        log::warn!("could not persist params of session {}: {e}", session.id);
    }
    let status = session.status();
    Ok(Json(json!({
        "params": params,
        "stats": status.stats,
        "oracle_calls": status.oracle_calls,
        "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
    }))
    .into_response())
}

async fn segment(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    let req: SegmentRequest = json_body(&body)?;
    let groups = blocking(move || session.segment(&req)).await?;
    Ok(Json(json!({"groups": groups})).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    mode: Option<String>,
    size: Option<u32>,
}

fn tar_of(files: &[(String, Vec<u8>)]) -> crate::Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    for (path, bytes) in files {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        builder
            .append_data(&mut header, path, bytes.as_slice())
            .map_err(|e| Error::io(path, e))?;
    }
    builder.into_inner().map_err(|e| Error::io("masks.tar", e))
}

async fn export(
    State(engine): State<Arc<Engine>>,
    Path((id, kind)): Path<(String, String)>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let session = session_of(&engine, id).await?;
    let (content_type, name, bytes) = match kind.as_str() {
        "uv" => {
            let mode: BakeMode = q.mode.as_deref().unwrap_or("ids").parse()?;
            let size = q.size.unwrap_or(DEFAULT_ATLAS_SIZE);
            let pgm = blocking(move || session.export_uv(mode, size)).await?;
            ("image/x-portable-graymap", "atlas.pgm", pgm)
        }
        "cloud" => ("application/octet-stream", "cloud.msc", session.export_cloud()?),
        "masks" => {
            let files = blocking(move || session.export_masks()).await?;
            ("application/x-tar", "masks.tar", tar_of(&files)?)
        }
        other => return Err(ApiError(Error::UnknownSession(format!("export `{other}`")))),
    };
    Ok((
        [
            (header::CONTENT_TYPE, content_type.to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}\"")),
        ],
        bytes,
    )
        .into_response())
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/view", get(view))
        .route("/sessions/{id}/click", post(click))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/params", patch(set_params))
        .route("/sessions/{id}/segment", post(segment))
        .route("/sessions/{id}/export/{kind}", get(export))
        .with_state(engine)
}

/// Serves the API on `port` until the process ends.
pub async fn serve(engine: Arc<Engine>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await
}
