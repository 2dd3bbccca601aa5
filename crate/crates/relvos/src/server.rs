//! HTTP session service. See `docs/http-api.md` for the wire format.
//!
//! Each session publishes its latest completed round as an immutable
//! `Arc<SessionState>`; readers clone the `Arc` and never wait for a running
//! round. A round runs on the blocking pool against a private copy and is
//! published when it finishes. A second submission while one is running is
//! rejected with 409.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use relvos_core::session::{select_rs1, select_rs4};
use relvos_core::synthetic::SyntheticConfig;
use relvos_core::{AnnotationSet, EngineConfig, GuidanceMode, LabelImage, Mark, RgbFrame, SessionState};
use serde::{Deserialize, Serialize};

use crate::dataset::infer_num_objects;
use crate::error::IoError;
use crate::rle::RleMask;
use crate::snapshot::{SessionSnapshot, VideoSource, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};

pub const API_VERSION: &str = "v1";
const THUMBNAIL_SIZE: u32 = 160;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Directory of named sequences.
    pub data_root: Option<PathBuf>,
    /// Where finalized sessions are written.
    pub snapshot_dir: PathBuf,
    /// Engine configuration for sessions that do not bring their own.
    pub engine: EngineConfig,
}

struct Slot {
    source: VideoSource,
    published: RwLock<Arc<SessionState>>,
    busy: AtomicBool,
    finalized: AtomicBool,
}

impl Slot {
    fn new(source: VideoSource, session: SessionState) -> Self {
        Self {
            source,
            published: RwLock::new(Arc::new(session)),
            busy: AtomicBool::new(false),
            finalized: AtomicBool::new(false),
        }
    }

    fn current(&self) -> Arc<SessionState> {
        self.published.read().expect("lock poisoned").clone()
    }
}

/// Clears the busy flag however the round ends.
struct BusyGuard(Arc<Slot>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, Arc<Slot>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .expect("lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }

    fn insert(&self, slot: Slot) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.sessions.write().expect("lock poisoned").insert(id.clone(), Arc::new(slot));
        id
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::UnknownSequence(_) => Self::not_found(e.to_string()),
            IoError::Engine(inner) => inner.into(),
            IoError::Io { .. } => Self::internal(e.to_string()),
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl From<relvos_core::Error> for ApiError {
    fn from(e: relvos_core::Error) -> Self {
        match e {
            relvos_core::Error::FrameOutOfRange { .. } => Self::not_found(e.to_string()),
            relvos_core::Error::NotPositiveDefinite | relvos_core::Error::NonFinite(_) => Self::internal(e.to_string()),
            other => Self::bad_request(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Sequence name under the data root.
    pub sequence: Option<String>,
    /// Generate a synthetic video instead.
    pub synthetic: Option<SyntheticConfig>,
    /// Required when the sequence has no masks to infer it from.
    pub num_objects: Option<u8>,
    pub config: Option<EngineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub source: VideoSource,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub num_objects: u8,
    pub round: usize,
    pub annotated_frames: Vec<usize>,
    pub in_progress: bool,
    pub finalized: bool,
}

fn info(id: &str, slot: &Slot) -> SessionInfo {
    let s = slot.current();
    let shape = s.grid_shape();
    SessionInfo {
        session_id: id.to_string(),
        source: slot.source.clone(),
        num_frames: s.num_frames(),
        width: shape.frame_width,
        height: shape.frame_height,
        num_objects: s.num_objects(),
        round: s.round(),
        annotated_frames: s.annotated_frames(),
        in_progress: slot.busy.load(Ordering::Acquire),
        finalized: slot.finalized.load(Ordering::Acquire),
    }
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Json(req) = body?;
    let source = match (req.sequence, req.synthetic) {
        (Some(sequence), None) => VideoSource::Dataset { sequence },
        (None, Some(config)) => VideoSource::Synthetic { config },
        _ => return Err(ApiError::bad_request("give exactly one of \"sequence\" and \"synthetic\"")),
    };
    if let VideoSource::Dataset { sequence } = &source {
        // Sessions only open named sequences inside the data root.
        let plain = Path::new(sequence)
            .components()
            .all(|c| matches!(c, std::path::Component::Normal(_)));
        if !plain || app.config.data_root.is_none() {
            return Err(ApiError::not_found(format!("unknown sequence {sequence:?}")));
        }
    }
    let engine = req.config.unwrap_or_else(|| app.config.engine.clone());
    let root = app.config.data_root.clone();
    let num_objects = req.num_objects;
    let src = source.clone();
    let session = blocking(move || {
        let (frames, gt) = src.load(root.as_deref())?;
        let k = match (num_objects, gt) {
            (Some(k), _) => k,
            (None, Some(gt)) => infer_num_objects(&gt)?,
            (None, None) => 0,
        };
        if k == 0 {
            return Err(ApiError::bad_request("num_objects is required (the sequence has no masks)"));
        }
        Ok(SessionState::new(frames, k, engine)?)
    })
    .await?;
    let slot = Slot::new(source, session);
    let id = app.insert(slot);
    let slot = app.slot(&id)?;
    Ok((StatusCode::CREATED, Json(info(&id, &slot))))
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionInfo>> {
    let slot = app.slot(&id)?;
    Ok(Json(info(&id, &slot)))
}

fn frame_of(s: &SessionState, t: usize) -> ApiResult<&RgbFrame> {
    s.frame(t)
        .ok_or_else(|| ApiError::not_found(format!("frame {t} is out of range for a {}-frame video", s.num_frames())))
}

fn png_response(img: image::RgbImage) -> ApiResult<Response> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], buf.into_inner()).into_response())
}

fn rgb_image(frame: &RgbFrame) -> image::RgbImage {
    image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.to_rgb8()).expect("buffer size matches")
}

async fn get_frame(State(app): State<AppState>, UrlPath((id, t)): UrlPath<(String, usize)>) -> ApiResult<Response> {
    let s = app.slot(&id)?.current();
    png_response(rgb_image(frame_of(&s, t)?))
}

/// Distinct overlay colors for object ids 1, 2, ...
pub fn overlay_color(k: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
    ];
    PALETTE[(k as usize + PALETTE.len() - 1) % PALETTE.len()]
}

/// Frame with the mask blended in at half opacity.
pub fn overlay(frame: &RgbFrame, mask: Option<&LabelImage>) -> image::RgbImage {
    let mut img = rgb_image(frame);
    if let Some(mask) = mask {
        for (px, &k) in img.pixels_mut().zip(&mask.data) {
            if k > 0 {
                let c = overlay_color(k);
                for i in 0..3 {
                    px.0[i] = ((px.0[i] as u16 + c[i] as u16) / 2) as u8;
                }
            }
        }
    }
    img
}

async fn get_thumbnail(State(app): State<AppState>, UrlPath((id, t)): UrlPath<(String, usize)>) -> ApiResult<Response> {
    let s = app.slot(&id)?.current();
    let frame = frame_of(&s, t)?;
    let mask = if s.round() > 0 { Some(s.mask(t)?) } else { None };
    let img = overlay(frame, mask.as_ref());
    let scale = THUMBNAIL_SIZE as f64 / img.width().max(img.height()) as f64;
    let thumb = if scale < 1.0 {
        let w = ((img.width() as f64 * scale).round() as u32).max(1);
        let h = ((img.height() as f64 * scale).round() as u32).max(1);
        image::imageops::resize(&img, w, h, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    png_response(thumb)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRound {
    pub frame: usize,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResponse {
    pub round: usize,
    pub annotated_frame: usize,
    pub num_marks: usize,
    pub annotated_frames: Vec<usize>,
    pub segmented: Vec<usize>,
    pub r_scores: Vec<f64>,
}

async fn submit_round(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitRound>, JsonRejection>,
) -> ApiResult<Json<RoundResponse>> {
    let slot = app.slot(&id)?;
    let Json(req) = body?;
    if slot.finalized.load(Ordering::Acquire) {
        return Err(ApiError::conflict("finalized", "session is finalized"));
    }
    let current = slot.current();
    if req.frame >= current.num_frames() {
        return Err(ApiError::bad_request(format!(
            "frame {} is out of range for a {}-frame video",
            req.frame,
            current.num_frames()
        )));
    }
    let annotations = AnnotationSet::new(req.frame, req.marks);
    let shape = current.grid_shape();
    annotations.validate(shape.frame_width, shape.frame_height, current.num_objects())?;
    if slot
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::conflict("round_in_progress", "a round is already in progress for this session"));
    }
    let guard = BusyGuard(slot.clone());
    let next = blocking(move || {
        // Re-read under the busy flag: nothing can publish in between.
        let mut s = (*guard.0.current()).clone();
        s.run_round(annotations)?;
        let s = Arc::new(s);
        *guard.0.published.write().expect("lock poisoned") = s.clone();
        drop(guard);
        Ok(s)
    })
    .await?;
    let rec = next.log().last().expect("round logged");
    Ok(Json(RoundResponse {
        round: rec.round,
        annotated_frame: rec.annotated_frame,
        num_marks: rec.num_marks,
        annotated_frames: rec.annotated_frames.clone(),
        segmented: rec.segmented.clone(),
        r_scores: rec.r_scores.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub frame: usize,
    pub round: usize,
    pub width: usize,
    pub height: usize,
    pub mask: RleMask,
    /// Aggregated probability of objects `1..=K`, one full-resolution map each.
    pub probabilities: Vec<Vec<f64>>,
}

fn no_round_yet() -> ApiError {
    ApiError::conflict("no_round", "no round has completed yet")
}

async fn get_mask(State(app): State<AppState>, UrlPath((id, t)): UrlPath<(String, usize)>) -> ApiResult<Json<MaskResponse>> {
    let s = app.slot(&id)?.current();
    frame_of(&s, t)?;
    let field = s.label_field(t).ok_or_else(no_round_yet)?;
    Ok(Json(MaskResponse {
        frame: t,
        round: s.round(),
        width: field.width,
        height: field.height,
        mask: RleMask::encode(&field.mask),
        probabilities: field.probabilities[1..].to_vec(),
    }))
}

#[derive(Debug, Deserialize)]
struct GuidanceQuery {
    mode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceCandidate {
    pub frame: usize,
    pub r_score: f64,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceResponse {
    pub mode: String,
    pub round: usize,
    /// Ascending by R-score. Empty when every frame is annotated.
    pub candidates: Vec<GuidanceCandidate>,
}

async fn get_guidance(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<GuidanceQuery>,
) -> ApiResult<Json<GuidanceResponse>> {
    let s = app.slot(&id)?.current();
    let mode: GuidanceMode = q
        .mode
        .as_deref()
        .unwrap_or("rs4")
        .parse()
        .map_err(|e: relvos_core::Error| ApiError::bad_request(e.to_string()))?;
    if s.round() == 0 {
        return Err(no_round_yet());
    }
    let scores = s.r_scores();
    let annotated = s.annotated_frames();
    let frames = match mode {
        GuidanceMode::Rs1 => select_rs1(scores, &annotated).into_iter().collect(),
        GuidanceMode::Rs4 => select_rs4(
            scores,
            &annotated,
            s.config().rs4_count,
            s.config().rs4_min_gap(s.num_frames()),
        ),
    };
    let mut candidates: Vec<GuidanceCandidate> = frames
        .into_iter()
        .map(|t| GuidanceCandidate {
            frame: t,
            r_score: scores[t],
            thumbnail: format!("/{API_VERSION}/sessions/{id}/frames/{t}/thumbnail"),
        })
        .collect();
    candidates.sort_by(|a, b| a.r_score.total_cmp(&b.r_score).then(a.frame.cmp(&b.frame)));
    Ok(Json(GuidanceResponse {
        mode: mode.name().to_string(),
        round: s.round(),
        candidates,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RScoresResponse {
    pub round: usize,
    pub r_scores: Vec<f64>,
}

async fn get_r_scores(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RScoresResponse>> {
    let s = app.slot(&id)?.current();
    if s.round() == 0 {
        return Err(no_round_yet());
    }
    Ok(Json(RScoresResponse {
        round: s.round(),
        r_scores: s.r_scores().to_vec(),
    }))
}

fn capture(slot: &Slot) -> ApiResult<SessionSnapshot> {
    Ok(SessionSnapshot::capture(&slot.current(), slot.source.clone())?)
}

async fn get_snapshot(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSnapshot>> {
    let slot = app.slot(&id)?;
    Ok(Json(capture(&slot)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub session_id: String,
    pub round: usize,
    pub snapshot_path: PathBuf,
}

async fn finalize(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<FinalizeResponse>> {
    let slot = app.slot(&id)?;
    if slot.busy.load(Ordering::Acquire) {
        return Err(ApiError::conflict("round_in_progress", "a round is in progress for this session"));
    }
    slot.finalized.store(true, Ordering::Release);
    let snap = capture(&slot)?;
    let path = app.config.snapshot_dir.join(format!("{id}.json"));
    let (p, round) = (path.clone(), snap.annotations.len());
    blocking(move || Ok(snap.save(&p)?)).await?;
    Ok(Json(FinalizeResponse {
        session_id: id,
        round,
        snapshot_path: path,
    }))
}

async fn restore(
    State(app): State<AppState>,
    body: Result<Json<SessionSnapshot>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Json(snap) = body?;
    if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
        return Err(ApiError::bad_request(format!(
            "expected a {SNAPSHOT_FORMAT:?} version {SNAPSHOT_VERSION} snapshot, got {:?} version {}",
            snap.format, snap.version
        )));
    }
    let root = app.config.data_root.clone();
    let source = snap.source.clone();
    let session = blocking(move || Ok(snap.restore(root.as_deref())?)).await?;
    let id = app.insert(Slot::new(source, session));
    let slot = app.slot(&id)?;
    Ok((StatusCode::CREATED, Json(info(&id, &slot))))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "api": API_VERSION }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/restore", post(restore))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/frames/{t}", get(get_frame))
        .route("/v1/sessions/{id}/frames/{t}/thumbnail", get(get_thumbnail))
        .route("/v1/sessions/{id}/rounds", post(submit_round))
        .route("/v1/sessions/{id}/masks/{t}", get(get_mask))
        .route("/v1/sessions/{id}/guidance", get(get_guidance))
        .route("/v1/sessions/{id}/r_scores", get(get_r_scores))
        .route("/v1/sessions/{id}/snapshot", get(get_snapshot))
        .route("/v1/sessions/{id}/finalize", post(finalize))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: std::net::SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("relvos listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
