use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::header::{ACCEPT, CONTENT_TYPE};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use gridlab_core::{Annotation, ConvergenceConfig, GridMode, Metric, TextBox};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::store::{NewSession, NewStimulus, Store};

pub const TOKEN_HEADER: &str = "x-participant-token";
const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/api/stimuli", post(create_stimulus).get(list_stimuli))
        .route("/api/stimuli/{id}", get(get_stimulus))
        .route("/api/stimuli/{id}/grid", get(get_grid))
        .route("/api/stimuli/{id}/image", get(get_image))
        .route("/api/stimuli/{id}/importance", get(get_importance))
        .route("/api/stimuli/{id}/convergence", get(get_convergence))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(session_next))
        .route("/api/annotations", post(submit_annotation))
        .route("/api/annotations/{id}", get(get_annotation))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(AppState { store })
}

/// Runs store work off the async executor; the store does blocking file I/O.
async fn blocking<T, F>(f: F) -> Result<T>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid JSON body: {e}")))
}

fn token(headers: &HeaderMap) -> Option<String> {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
}

fn mode_param(q: &HashMap<String, String>) -> Result<GridMode> {
    let raw = q
        .get("mode")
        .ok_or_else(|| ServiceError::BadRequest("missing query parameter `mode` (static|adaptive)".into()))?;
    Ok(raw.parse()?)
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>> {
    q.get(name)
        .map(|v| {
            v.parse()
                .map_err(|_| ServiceError::BadRequest(format!("invalid query parameter `{name}`: `{v}`")))
        })
        .transpose()
}

fn png(bytes: Vec<u8>) -> Response {
    ([(CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateStimulusBody {
    image_png_base64: String,
    task_prompt: String,
    #[serde(default)]
    question: String,
    tile_size: Option<u32>,
    static_n: Option<u32>,
    text_boxes: Option<Vec<TextBox>>,
    budget_ms: Option<u64>,
    max_block_w: Option<u32>,
    max_block_h: Option<u32>,
}

async fn create_stimulus(State(state): State<AppState>, body: Bytes) -> Result<Response> {
    let req: CreateStimulusBody = parse_body(&body)?;
    let image_png = base64::engine::general_purpose::STANDARD
        .decode(req.image_png_base64.trim())
        .map_err(|e| ServiceError::BadRequest(format!("image_png_base64 is not valid base64: {e}")))?;
    let new = NewStimulus {
        image_png,
        task_prompt: req.task_prompt,
        question: req.question,
        tile_size: req.tile_size,
        static_n: req.static_n,
        text_boxes: req.text_boxes,
        budget_ms: req.budget_ms,
        max_block_w: req.max_block_w,
        max_block_h: req.max_block_h,
    };
    let store = state.store.clone();
    let (stimulus, created) = blocking(move || store.create_stimulus(new)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(stimulus.as_ref().clone())).into_response())
}

async fn list_stimuli(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "stimuli": state.store.stimulus_ids() }))
}

async fn get_stimulus(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let stimulus = state.store.stimulus(&id)?;
    Ok(Json(stimulus.as_ref().clone()).into_response())
}

async fn get_grid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response> {
    let mode = mode_param(&q)?;
    let stimulus = state.store.stimulus(&id)?;
    Ok(Json(stimulus.spec(mode).clone()).into_response())
}

async fn get_image(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let store = state.store.clone();
    Ok(png(blocking(move || store.image_png(&id)).await?))
}

async fn get_importance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Result<Response> {
    let mode = mode_param(&q)?;
    let wants_png = headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("image/png"));
    let store = state.store.clone();
    let key = id.clone();
    let (map, count) = blocking(move || store.importance(&key, mode)).await?;
    if wants_png {
        return Ok(png(map.encode_png()?));
    }
    Ok(Json(json!({
        "stimulus_id": id,
        "mode": mode,
        "participants": count,
        "width": map.width,
        "height": map.height,
        "values": map.values,
    }))
    .into_response())
}

async fn get_convergence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response> {
    let mode = mode_param(&q)?;
    let metric_raw = q.get("metric").map(String::as_str).unwrap_or("all");
    let metrics = Metric::parse_list(metric_raw)?;
    let mut config = ConvergenceConfig::default();
    if let Some(orders) = parse_param(&q, "orders")? {
        config.orders = orders;
    }
    if let Some(threshold) = parse_param(&q, "threshold")? {
        config.threshold = threshold;
    }
    if let Some(seed) = parse_param(&q, "seed")? {
        config.seed = seed;
    }
    let single = metrics.len() == 1;
    let store = state.store.clone();
    let reports = blocking(move || store.convergence(&id, mode, &metrics, &config)).await?;
    Ok(if single {
        Json(&reports[0]).into_response()
    } else {
        Json(&reports).into_response()
    })
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateSessionBody {
    participant_id: Option<String>,
    mode: Option<GridMode>,
    seed: Option<u64>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response> {
    let req: CreateSessionBody = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSessionBody::default()
    } else {
        parse_body(&body)?
    };
    let store = state.store.clone();
    let (view, token) = blocking(move || {
        let view = store.create_session(NewSession {
            participant_id: req.participant_id,
            mode: req.mode,
            seed: req.seed,
        })?;
        let token = store
            .session_token(&view.session_id)
            .ok_or_else(|| ServiceError::Internal("session vanished after creation".into()))?;
        Ok((view, token))
    })
    .await?;
    let mut body = serde_json::to_value(&view).map_err(|e| ServiceError::Internal(e.to_string()))?;
    body["token"] = json!(token);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn session_next(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response> {
    let token = token(&headers);
    let store = state.store.clone();
    let (view, next) = blocking(move || store.session_next(&id, token.as_deref())).await?;
    let next = next.map(|s| {
        json!({
            "stimulus_id": s.meta.id,
            "task_prompt": s.meta.task_prompt,
            "question": s.meta.question,
            "width": s.meta.width,
            "height": s.meta.height,
            "image_url": format!("/api/stimuli/{}/image", s.meta.id),
            "grid_spec": s.spec(view.assigned_mode),
        })
    });
    Ok(Json(json!({ "session": view, "next": next })).into_response())
}

async fn submit_annotation(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response> {
    let ann: Annotation = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::validation(format!("annotation does not match the schema: {e}"), Vec::new()))?;
    let token = token(&headers);
    let store = state.store.clone();
    let receipt = blocking(move || store.submit(token.as_deref(), ann)).await?;
    let status = if receipt.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(receipt)).into_response())
}

async fn get_annotation(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    Ok(Json(state.store.annotation(&id)?).into_response())
}
