//! HTTP/JSON surface over sessions and the device.

use std::sync::Arc;

use aromagen_core::composition::{CompositionError, ConstraintWarning};
use aromagen_core::gateway::{GatewayError, Modality, UserInput};
use aromagen_core::session::{DiffEntry, RefinementTurn, SessionError, SessionId, SessionStatus};
use aromagen_core::{to_schedule, DispenseSchedule, Palette, RatioVector, Session, SessionManager};
use aromagen_device::{ClientError, DeviceClient, DispenseReport};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(http_status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            http_status,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "internal", message)
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match e {
            GatewayError::InvalidInput(_) => 400,
            GatewayError::Provider(_) => 502,
            GatewayError::Unrepairable { .. } => 422,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Gateway(g) => g.into(),
            SessionError::NotFound(_) => Self::new(404, "session_not_found", e.to_string()),
            SessionError::Busy(_) => Self::new(409, "session_busy", e.to_string()),
            SessionError::InvalidState { .. } => Self::new(409, "invalid_state", e.to_string()),
            SessionError::Io(_) => Self::new(500, "log_write_failed", e.to_string()),
            SessionError::Replay { .. } => Self::new(500, "log_corrupt", e.to_string()),
        }
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Busy(_) => Self::new(409, "device_busy", e.to_string()),
            ClientError::EmptySchedule => Self::new(400, "empty_schedule", e.to_string()),
            ClientError::Io(_) | ClientError::Disconnected => {
                Self::new(502, "device_unreachable", e.to_string())
            }
            ClientError::Rejected(_) | ClientError::Unexpected { .. } => {
                Self::new(502, "device_protocol", e.to_string())
            }
        }
    }
}

impl From<CompositionError> for ApiError {
    fn from(e: CompositionError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(400, "invalid_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize)]
pub struct TurnView {
    pub index: u32,
    /// Twelve entries in channel order, as two-decimal strings.
    pub ratios: RatioVector,
    /// Release plan for this composition.
    pub schedule: DispenseSchedule,
    pub justification: String,
    pub feedback: Option<String>,
    pub changes_made: Option<String>,
    pub repaired: bool,
    pub latency_ms: u64,
    pub modalities: Vec<Modality>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ConstraintWarning>,
}

impl TurnView {
    pub fn new(turn: &RefinementTurn, palette: &Palette) -> ApiResult<Self> {
        Ok(Self {
            index: turn.index,
            ratios: turn.ratios.clone(),
            schedule: to_schedule(&turn.ratios, palette)?,
            justification: turn.justification.clone(),
            feedback: turn.feedback.clone(),
            changes_made: turn.changes_made.clone(),
            repaired: turn.repaired,
            latency_ms: turn.latency_ms,
            modalities: turn.modalities.iter().copied().collect(),
            warnings: turn.ratios.active_band_warning().into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub original_input: UserInput,
    pub refinement_turns: usize,
    pub turns: Vec<TurnView>,
}

impl SessionView {
    pub fn new(session: &Session, palette: &Palette) -> ApiResult<Self> {
        Ok(Self {
            session_id: session.id.clone(),
            status: session.status,
            original_input: session.original_input.clone(),
            refinement_turns: session.refinement_turns(),
            turns: session
                .turns
                .iter()
                .map(|t| TurnView::new(t, palette))
                .collect::<ApiResult<_>>()?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CreatedView {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub turn: TurnView,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinedView {
    pub session_id: SessionId,
    pub turn: TurnView,
    pub diff: Vec<DiffEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub text: Option<String>,
    pub image_base64: Option<String>,
    pub audio_base64: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRequest {
    pub feedback: String,
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
    /// Address of the dispenser's protocol socket.
    pub device_addr: String,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/palette", get(palette))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/play", post(play))
        .route("/sessions/{id}/satisfied", post(satisfied))
        .with_state(state)
}

/// Runs a provider-bound call off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn decode(field: &'static str, data: Option<String>) -> ApiResult<Option<Vec<u8>>> {
    data.map(|d| {
        STANDARD
            .decode(d.trim())
            .map_err(|e| ApiError::new(400, "invalid_request", format!("{field}: {e}")))
    })
    .transpose()
}

async fn palette(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(state.manager.palette().to_document())
}

async fn create(
    State(state): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreatedView>)> {
    let Json(req) = body?;
    let image = decode("image_base64", req.image_base64)?;
    let audio = decode("audio_base64", req.audio_base64)?;
    let manager = Arc::clone(&state.manager);
    let view = blocking(move || {
        let input = manager.cascade_input(req.text, image.as_deref(), audio.as_deref())?;
        let session = manager.start(input)?;
        Ok(CreatedView {
            session_id: session.id.clone(),
            status: session.status,
            turn: TurnView::new(session.latest(), manager.palette())?,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn refine(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RefineRequest>, JsonRejection>,
) -> ApiResult<Json<RefinedView>> {
    let Json(req) = body?;
    let manager = Arc::clone(&state.manager);
    let view = blocking(move || {
        let (session, diff) = manager.refine(&SessionId::from(id.as_str()), &req.feedback)?;
        Ok(RefinedView {
            session_id: session.id.clone(),
            turn: TurnView::new(session.latest(), manager.palette())?,
            diff,
        })
    })
    .await?;
    Ok(Json(view))
}

async fn show(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let session = state.manager.get(&SessionId::from(id.as_str()))?;
    Ok(Json(SessionView::new(&session, state.manager.palette())?))
}

async fn satisfied(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let session = state.manager.satisfy(&SessionId::from(id.as_str()))?;
    Ok(Json(SessionView::new(&session, state.manager.palette())?))
}

async fn play(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<DispenseReport>> {
    let session = state.manager.get(&SessionId::from(id.as_str()))?;
    let schedule = to_schedule(&session.latest().ratios, state.manager.palette())?;
    let mut client = DeviceClient::connect(&state.device_addr)
        .await
        .map_err(ClientError::from)?;
    let report = client.play_schedule(&schedule).await?;
    tracing::info!(session = %session.id, completed = report.completed, "cycle finished");
    Ok(Json(report))
}
