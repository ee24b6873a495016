//! HTTP API over the case store and triage pipeline.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Serialize;
use serde_json::{Map, Value};
use triage_core::datasets::FeedbackRecord;
use triage_core::explain::Heatmap;
use triage_core::image_model::{decode_ppm, read_ppm, CnnModel, Image};
use triage_core::text_model::{TextModel, TextPrediction};
use triage_core::triage::{
    assess, Action, CaseState, CaseStore, Clock, ImageInput, ImageVerdict, TriageCase, TriageConfig, TriageModels,
    DEFAULT_PAGE_SIZE,
};
use triage_core::Error;

pub const MAX_PAGE_SIZE: usize = 200;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub text_model: PathBuf,
    pub relevance_model: PathBuf,
    pub damage_model: PathBuf,
    pub triage: TriageConfig,
}

pub struct AppState {
    pub models: TriageModels,
    pub config: TriageConfig,
    pub store: CaseStore,
}

impl AppState {
    /// Loads the models and opens the store named by `config`.
    pub fn load(config: &ServiceConfig, clock: Arc<dyn Clock>) -> triage_core::Result<Self> {
        let models = TriageModels {
            text: TextModel::load(&config.text_model)?,
            relevance: CnnModel::load(&config.relevance_model)?,
            damage: CnnModel::load(&config.damage_model)?,
        };
        config.triage.validate(models.text.taxonomy())?;
        let store = CaseStore::open(&config.data_dir, models.text.taxonomy().clone(), clock)?;
        Ok(Self {
            models,
            config: config.triage.clone(),
            store,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn bad_field(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            error: message.into(),
            field: Some(field.to_string()),
        }
    }

    fn bad_body(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            error: message.into(),
            field: None,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: e.to_string(),
            field: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownCase(_) => StatusCode::NOT_FOUND,
            Error::NotEscalated(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            error: e.to_string(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_object(body: &[u8], allowed: &[&str]) -> ApiResult<Map<String, Value>> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad_body(format!("invalid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(ApiError::bad_body("body must be a JSON object"));
    };
    if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ApiError::bad_field(k, format!("unknown field {k:?}")));
    }
    Ok(map)
}

fn optional_string(map: &Map<String, Value>, field: &str) -> ApiResult<Option<String>> {
    match map.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ApiError::bad_field(field, format!("{field} must be a string"))),
    }
}

/// A feedback submission: the record to assess and its image, if any.
pub fn parse_feedback(body: &[u8]) -> ApiResult<(FeedbackRecord, ImageInput)> {
    let map = json_object(body, &["comment", "image"])?;
    let comment = optional_string(&map, "comment")?.unwrap_or_default();
    let image = match optional_string(&map, "image")? {
        None => ImageInput::None,
        Some(b64) => {
            let bytes = BASE64
                .decode(b64.trim())
                .map_err(|e| ApiError::bad_field("image", format!("image is not valid base64: {e}")))?;
            match decode_ppm(&bytes) {
                Ok(img) => ImageInput::Loaded(img),
                Err(e) => ImageInput::Unreadable(e.to_string()),
            }
        }
    };
    Ok((FeedbackRecord::text("", comment, None), image))
}

/// `(action, analyst id)` from a decision body.
pub fn parse_decision(body: &[u8]) -> ApiResult<(Action, String)> {
    let map = json_object(body, &["action", "label", "analyst_id"])?;
    let analyst_id = optional_string(&map, "analyst_id")?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ApiError::bad_field("analyst_id", "analyst_id is required"))?;
    let label = optional_string(&map, "label")?;
    let action = match optional_string(&map, "action")?.as_deref() {
        Some("approve_refund") => Action::ApproveRefund,
        Some("reject") => Action::Reject,
        Some("reassign") => Action::Reassign {
            label: label.ok_or_else(|| ApiError::bad_field("label", "reassign requires a label"))?,
        },
        Some(other) => {
            return Err(ApiError::bad_field(
                "action",
                format!("unknown action {other:?}; expected approve_refund, reject or reassign"),
            ))
        }
        None => return Err(ApiError::bad_field("action", "action is required")),
    };
    Ok((action, analyst_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ImageVerdicts {
    pub relevance: Option<ImageVerdict>,
    pub damage: Option<ImageVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FeedbackResponse {
    pub case_id: String,
    pub state: CaseState,
    pub reason: Option<String>,
    pub text_prediction: Option<TextPrediction>,
    pub image_verdicts: ImageVerdicts,
}

impl From<&TriageCase> for FeedbackResponse {
    fn from(c: &TriageCase) -> Self {
        Self {
            case_id: c.id.clone(),
            state: c.state,
            reason: c.reason.clone(),
            text_prediction: c.text_prediction.clone(),
            image_verdicts: ImageVerdicts {
                relevance: c.image_relevance.clone(),
                damage: c.image_damage.clone(),
            },
        }
    }
}

/// Raw 8-bit RGB for client-side drawing.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RgbPayload {
    pub width: usize,
    pub height: usize,
    pub rgb_base64: String,
}

impl RgbPayload {
    pub fn from_image(image: &Image) -> Self {
        let rgb = image.to_rgb();
        let bytes: Vec<u8> = rgb
            .pixels()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self {
            width: rgb.width(),
            height: rgb.height(),
            rgb_base64: BASE64.encode(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CaseDetail {
    #[serde(flatten)]
    pub case: TriageCase,
    pub image: Option<RgbPayload>,
    /// Heat values through the blue-to-red colormap.
    pub heatmap: Option<RgbPayload>,
}

pub fn case_detail(store: &CaseStore, case: TriageCase) -> ApiResult<CaseDetail> {
    let load = |rel: &Option<String>| -> ApiResult<Option<Image>> {
        rel.as_ref()
            .map(|p| read_ppm(store.dir().join(p)))
            .transpose()
            .map_err(ApiError::internal)
    };
    let image = load(&case.image_path)?.map(|i| RgbPayload::from_image(&i));
    let heatmap = load(&case.heatmap_path)?.map(|gray| {
        let heat = Heatmap {
            width: gray.width(),
            height: gray.height(),
            values: gray.pixels().to_vec(),
            target_class: 1,
        };
        RgbPayload::from_image(&heat.to_rgb())
    });
    Ok(CaseDetail { case, image, heatmap })
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<FeedbackResponse>)> {
    let (record, image) = parse_feedback(&body)?;
    let case = tokio::task::spawn_blocking(move || -> ApiResult<TriageCase> {
        let assessment = assess(&record, image, &state.models, &state.config)?;
        Ok(state.store.create(assessment)?)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok((StatusCode::CREATED, Json(FeedbackResponse::from(&case))))
}

async fn list_cases(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<triage_core::triage::Page>> {
    if let Some(k) = params
        .keys()
        .find(|k| !["state", "page", "page_size"].contains(&k.as_str()))
    {
        return Err(ApiError::bad_field(k, format!("unknown query parameter {k:?}")));
    }
    let filter = match params.get("state") {
        None => None,
        Some(s) => {
            Some(CaseState::parse(s).ok_or_else(|| ApiError::bad_field("state", format!("unknown state {s:?}")))?)
        }
    };
    let number = |key: &str, default: usize, max: usize| -> ApiResult<usize> {
        match params.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|n| (1..=max).contains(n))
                .ok_or_else(|| ApiError::bad_field(key, format!("{key} must be an integer in 1..={max}"))),
        }
    };
    let page = number("page", 1, usize::MAX)?;
    let page_size = number("page_size", DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE)?;
    Ok(Json(state.store.queue(filter, page, page_size)?))
}

async fn get_case(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<CaseDetail>> {
    let case = state
        .store
        .get(&id)
        .ok_or_else(|| ApiError::from(Error::UnknownCase(id)))?;
    Ok(Json(case_detail(&state.store, case)?))
}

async fn post_decision(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<TriageCase>> {
    let (action, analyst_id) = parse_decision(&body)?;
    match state.store.analyst_resolve(&id, action, &analyst_id) {
        Ok(case) => Ok(Json(case)),
        Err(Error::UnknownClass(label)) => Err(ApiError::bad_field("label", format!("unknown class {label:?}"))),
        Err(e) => Err(e.into()),
    }
}

async fn get_stats(State(state): State<Arc<AppState>>) -> Json<triage_core::triage::Stats> {
    Json(state.store.stats())
}

async fn get_taxonomy(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(serde_json::json!({ "classes": state.store.taxonomy().classes() }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/feedback", post(post_feedback))
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/decision", post(post_decision))
        .route("/api/stats", get(get_stats))
        .route("/api/taxonomy", get(get_taxonomy))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
