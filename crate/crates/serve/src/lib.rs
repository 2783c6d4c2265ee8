//! JSON-over-HTTP service for the preference study and for interactive
//! style-conditioned generation.
//!
//! The answer log on disk is the source of truth; the in-memory score table
//! is rebuilt from it at startup and updated under one lock per answer.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use apdraw_core::corpus::{load_image, load_image_bytes, ImageKind, Manifest, StyleTag};
use apdraw_core::networks::{generate_drawing, Generator};
use apdraw_core::ranking::{
    aggregate_scores, load_answers, normalize_scores, sample_triplet, AnswerLog, PreferenceAnswer,
    ScoreTable, TripletHistory,
};
use apdraw_core::{Error, StyleVector};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Header carrying the exact style vector used for a generation.
pub const STYLE_HEADER: &str = "x-style-vector";

/// An HTTP error with a JSON body `{"error": …}`.
#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Replay(_) => StatusCode::CONFLICT,
            Error::Exhausted(_) => StatusCode::CONFLICT,
            Error::UnknownDrawing(_) => StatusCode::NOT_FOUND,
            Error::Decode { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            e if e.is_validation() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what.into())
}

fn unprocessable(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, what.into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub served: usize,
    pub answered: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub annotator: String,
    pub served: usize,
    pub answered: usize,
    pub by_style: BTreeMap<StyleTag, Counts>,
}

struct Session {
    annotator: String,
    focus: Option<StyleTag>,
    by_style: BTreeMap<StyleTag, Counts>,
}

struct Question {
    session: String,
    style: StyleTag,
    drawing_ids: [String; 3],
    answered: bool,
}

struct Study {
    table: ScoreTable,
    history: BTreeMap<StyleTag, TripletHistory>,
    sessions: HashMap<String, Session>,
    questions: HashMap<String, Question>,
    log: AnswerLog,
}

impl Study {
    fn progress(&self, id: &str) -> ApiResult<Progress> {
        let s = self
            .sessions
            .get(id)
            .ok_or_else(|| not_found(format!("unknown session {id}")))?;
        Ok(Progress {
            session_id: id.to_string(),
            annotator: s.annotator.clone(),
            served: s.by_style.values().map(|c| c.served).sum(),
            answered: s.by_style.values().map(|c| c.answered).sum(),
            by_style: s.by_style.clone(),
        })
    }
}

/// Everything the service needs at startup.
pub struct ServeOptions {
    /// Drawings to rank and photos to translate.
    pub manifest: Manifest,
    pub answer_log: PathBuf,
    pub seed: u64,
    /// The trained drawing generator; generation answers 503 without it.
    pub generator: Option<Generator>,
}

pub struct AppState {
    study: Mutex<Study>,
    manifest: Manifest,
    seed: u64,
    /// Content hash → drawing id.
    images: HashMap<String, String>,
    /// Drawing id → content hash.
    hashes: HashMap<String, String>,
    generator: Option<Arc<Generator>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl AppState {
    /// Replays the answer log into a fresh score table over the manifest's
    /// tagged drawings.
    pub fn new(opts: ServeOptions) -> apdraw_core::Result<Arc<Self>> {
        let pool: Vec<(String, StyleTag)> = opts
            .manifest
            .drawings()
            .filter_map(|r| match r.style_tag {
                Some(t) if t != StyleTag::Untagged => Some((r.id.clone(), t)),
                _ => None,
            })
            .collect();
        let answers = load_answers(&opts.answer_log)?;
        let table = aggregate_scores(pool.clone(), &answers)?;
        let mut history: BTreeMap<StyleTag, TripletHistory> = BTreeMap::new();
        for a in &answers {
            history.entry(a.style).or_default().insert(&a.drawing_ids);
        }
        let mut images = HashMap::new();
        let mut hashes = HashMap::new();
        for (id, _) in &pool {
            let path = &opts.manifest.get(id).expect("pool comes from the manifest").path;
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let h = hex(&Sha256::digest(&bytes));
            images.insert(h.clone(), id.clone());
            hashes.insert(id.clone(), h);
        }
        log::info!(
            "study: {} drawings, {} answers replayed from {}",
            pool.len(),
            answers.len(),
            opts.answer_log.display()
        );
        Ok(Arc::new(Self {
            study: Mutex::new(Study {
                table,
                history,
                sessions: HashMap::new(),
                questions: HashMap::new(),
                log: AnswerLog::open(&opts.answer_log)?,
            }),
            manifest: opts.manifest,
            seed: opts.seed,
            images,
            hashes,
            generator: opts.generator.map(Arc::new),
        }))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Study> {
        self.study.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/study/session", post(open_session))
        .route("/api/study/next", get(next_question))
        .route("/api/study/answer", post(answer))
        .route("/api/study/scores", get(scores))
        .route("/api/study/progress", get(progress))
        .route("/api/images/{hash}", get(image))
        .route("/api/generate", post(generate))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionRequest {
    pub annotator: String,
    #[serde(default)]
    pub style: Option<StyleTag>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
}

async fn open_session(
    State(st): State<Arc<AppState>>,
    Json(req): Json<SessionRequest>,
) -> ApiResult<Json<SessionResponse>> {
    if req.annotator.trim().is_empty() {
        return Err(unprocessable("annotator must not be empty"));
    }
    if req.style == Some(StyleTag::Untagged) {
        return Err(unprocessable("style focus must be a tagged style"));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let by_style = StyleTag::TAGGED.iter().map(|t| (*t, Counts::default())).collect();
    st.lock().sessions.insert(
        id.clone(),
        Session {
            annotator: req.annotator,
            focus: req.style,
            by_style,
        },
    );
    Ok(Json(SessionResponse { session_id: id }))
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextQuestion {
    pub question_id: String,
    pub style: StyleTag,
    pub drawing_ids: [String; 3],
    pub drawing_urls: [String; 3],
}

async fn next_question(
    State(st): State<Arc<AppState>>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Json<NextQuestion>> {
    let mut study = st.lock();
    let session = study
        .sessions
        .get(&q.session)
        .ok_or_else(|| not_found(format!("unknown session {}", q.session)))?;
    // Focused sessions stay on one style; others go to the least-served
    // style that still has unasked triplets.
    let mut order: Vec<StyleTag> = match session.focus {
        Some(t) => vec![t],
        None => StyleTag::TAGGED.to_vec(),
    };
    order.sort_by_key(|t| session.by_style[t].served);
    let mut last = None;
    for style in order {
        let pool = study.table.pool(style);
        let history = study.history.entry(style).or_default();
        let seed = st.seed ^ (style.index().expect("tagged") as u64) << 32;
        match sample_triplet(style, &pool, seed, history) {
            Ok(ids) => {
                history.insert(&ids);
                let qid = uuid::Uuid::new_v4().to_string();
                study.questions.insert(
                    qid.clone(),
                    Question {
                        session: q.session.clone(),
                        style,
                        drawing_ids: ids.clone(),
                        answered: false,
                    },
                );
                let s = study.sessions.get_mut(&q.session).expect("checked above");
                s.by_style.get_mut(&style).expect("all styles present").served += 1;
                let urls = ids.clone().map(|id| format!("/api/images/{}", st.hashes[&id]));
                return Ok(Json(NextQuestion {
                    question_id: qid,
                    style,
                    drawing_ids: ids,
                    drawing_urls: urls,
                }));
            }
            Err(e @ (Error::Exhausted(_) | Error::Validation(_))) => last = Some(e),
            Err(e) => return Err(e.into()),
        }
    }
    let msg = last.map_or_else(|| "no style available".to_string(), |e| e.to_string());
    Err(ApiError(StatusCode::CONFLICT, msg))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub session: String,
    pub question_id: String,
    /// Drawing ids from worst to best.
    pub order: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub accepted: bool,
    pub progress: Progress,
}

async fn answer(
    State(st): State<Arc<AppState>>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<Json<AnswerResponse>> {
    let mut study = st.lock();
    let annotator = study
        .sessions
        .get(&req.session)
        .ok_or_else(|| not_found(format!("unknown session {}", req.session)))?
        .annotator
        .clone();
    let question = study
        .questions
        .get(&req.question_id)
        .filter(|q| q.session == req.session)
        .ok_or_else(|| not_found(format!("question {} was not served to this session", req.question_id)))?;
    if question.answered || study.table.has_answered(&req.question_id) {
        return Err(Error::Replay(req.question_id).into());
    }
    let order: [String; 3] = req
        .order
        .clone()
        .try_into()
        .map_err(|_| unprocessable("order must list exactly 3 drawing ids"))?;
    let a = PreferenceAnswer {
        question_id: req.question_id.clone(),
        style: question.style,
        drawing_ids: question.drawing_ids.clone(),
        order,
        timestamp: now_ms(),
        annotator,
    };
    // Validate against a copy so a failed log write leaves the table as is.
    let mut next = study.table.clone();
    next.record_answer(&a)?;
    study.log.append(&a)?;
    study.table = next;
    let style = a.style;
    study.questions.get_mut(&req.question_id).expect("present").answered = true;
    let s = study.sessions.get_mut(&req.session).expect("present");
    s.by_style.get_mut(&style).expect("all styles present").answered += 1;
    Ok(Json(AnswerResponse {
        accepted: true,
        progress: study.progress(&req.session)?,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub style: StyleTag,
    pub raw_score: i64,
    pub n_appearances: u64,
    pub normalized: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoresResponse {
    pub answered: usize,
    pub scores: Vec<ScoreRow>,
}

async fn scores(State(st): State<Arc<AppState>>) -> ApiResult<Json<ScoresResponse>> {
    let table = st.lock().table.clone();
    // Normalization needs at least one answer; raw scores are always shown.
    let norm = normalize_scores(&table).ok();
    let scores = table
        .entries()
        .map(|(id, e)| ScoreRow {
            id: id.to_string(),
            style: e.style,
            raw_score: e.raw_score,
            n_appearances: e.n_appearances,
            normalized: norm.as_ref().and_then(|n| n.normalized(id)),
        })
        .collect();
    Ok(Json(ScoresResponse {
        answered: table.answered_count(),
        scores,
    }))
}

async fn progress(
    State(st): State<Arc<AppState>>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Json<Progress>> {
    Ok(Json(st.lock().progress(&q.session)?))
}

async fn image(State(st): State<Arc<AppState>>, Path(hash): Path<String>) -> ApiResult<Response> {
    let id = st
        .images
        .get(&hash)
        .ok_or_else(|| not_found(format!("no image with hash {hash}")))?;
    let path = &st.manifest.get(id).expect("indexed from the manifest").path;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::from(Error::io(path, e)))?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok((
        [
            (header::CONTENT_TYPE, mime),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(default)]
    pub photo_id: Option<String>,
    /// Base64-encoded PNG or JPEG.
    #[serde(default)]
    pub upload: Option<String>,
    pub style: Vec<f64>,
}

async fn generate(
    State(st): State<Arc<AppState>>,
    Json(req): Json<GenerateRequest>,
) -> ApiResult<Response> {
    let values: [f64; 3] = req
        .style
        .clone()
        .try_into()
        .map_err(|_| unprocessable(format!("style must have 3 components, got {}", req.style.len())))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(unprocessable("style components must be finite"));
    }
    let g = st
        .generator
        .clone()
        .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "no generator loaded".into()))?;
    let size = g.config().image_size;
    let photo = match (&req.photo_id, &req.upload) {
        (Some(id), None) => {
            let rec = st
                .manifest
                .get(id)
                .filter(|r| r.kind == ImageKind::Photo)
                .ok_or_else(|| not_found(format!("unknown photo {id}")))?;
            load_image(&rec.path, size, ImageKind::Photo)?
        }
        (None, Some(b64)) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| unprocessable(format!("upload is not base64: {e}")))?;
            load_image_bytes(&bytes, size, ImageKind::Photo)?
        }
        _ => return Err(unprocessable("give exactly one of photo_id and upload")),
    };
    let style = StyleVector::new(values).unwrap_or_else(|_| StyleVector::relaxed(values));
    let png = tokio::task::spawn_blocking(move || {
        generate_drawing(&photo, &style, &g).and_then(|d| d.encode_png())
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let echoed = serde_json::to_string(&values).expect("floats serialize");
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
    resp.headers_mut().insert(
        STYLE_HEADER,
        HeaderValue::from_str(&echoed).expect("JSON numbers are valid header text"),
    );
    Ok(resp)
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
