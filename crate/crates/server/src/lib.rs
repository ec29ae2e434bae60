//! HTTP API over the review engine. JSON in and out, UTF-8 throughout.
//!
//! Errors come back as `{"error": {"code": "...", "message": "..."}}` with
//! a status derived from the code.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use marginalia_core::criteria::{export_xml, import_json, import_xml};
use marginalia_core::engine::{AnnotationPatch, Engine, EngineError, Selection};
use marginalia_core::model::{OutputKind, ReportStructure, Sentiment};
use marginalia_core::store::{SessionId, SourceKind};

const MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "BadRequest",
            message: message.into(),
        }
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownSession" | "UnknownCriterion" | "UnknownAnnotation" => StatusCode::NOT_FOUND,
        "UnsupportedFormat" => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        "EmptyInput" | "BadRequest" => StatusCode::BAD_REQUEST,
        "DuplicateName" | "EmptyCriteria" | "InvalidCriteria" | "EmptyExcerpt" | "EmptyComment" | "EmptyAnswer"
        | "HumanAnchorNotExact" | "MissingQuestion" | "InvalidArgument" | "MissingBinding" => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        "NoAnnotations" | "EmptyReview" | "NoReport" | "Conflict" | "SessionExists" => StatusCode::CONFLICT,
        "Timeout" => StatusCode::GATEWAY_TIMEOUT,
        "AuthFailure" | "RateLimited" | "BackendError" | "UnparseableResponse" | "EmptyItems" => {
            StatusCode::BAD_GATEWAY
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = e.code();
        ApiError {
            status: status_for(code),
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
}

/// Run a blocking engine call off the async executor.
async fn run<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
    T: Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "InternalError",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

fn session_id(raw: &str) -> ApiResult<SessionId> {
    SessionId::parse(raw).map_err(|e| ApiError::from(EngineError::Store(e)))
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(end_session))
        .route("/sessions/{id}/text", get(text))
        .route("/sessions/{id}/criteria", get(get_criteria).put(put_criteria))
        .route("/sessions/{id}/criteria/{name}/annotate", post(annotate))
        .route("/sessions/{id}/criteria/{name}/compile", post(compile))
        .route("/sessions/{id}/criteria/{name}/viewpoints", post(viewpoints))
        .route("/sessions/{id}/criteria/{name}/recap", get(recap))
        .route("/sessions/{id}/annotations", get(list_annotations).post(add_annotation))
        .route("/sessions/{id}/annotations/{aid}", patch(patch_annotation))
        .route("/sessions/{id}/annotations/{aid}/followup", post(followup))
        .route("/sessions/{id}/annotations/{aid}/comments", post(add_comment))
        .route("/sessions/{id}/report", post(build_report))
        .route("/sessions/{id}/report.html", get(report_html))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(AppState { engine })
}

async fn create_session(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut manuscript: Option<Bytes> = None;
    let mut kind: Option<SourceKind> = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("invalid multipart body: {e}")))?
    {
        match field.name() {
            Some("manuscript") => {
                manuscript = Some(field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?);
            }
            Some("source_kind") => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                kind = Some(text.trim().parse().map_err(|e| ApiError::from(EngineError::Store(e)))?);
            }
            _ => {}
        }
    }
    let bytes = manuscript.ok_or_else(|| ApiError::bad_request("multipart field `manuscript` is required"))?;
    let kind = kind.unwrap_or_else(|| SourceKind::sniff(&bytes));
    let id = run(&state, move |e| e.create_session(&bytes, kind)).await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": id}))).into_response())
}

async fn end_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let id = session_id(&id)?;
    run(&state, move |e| e.end_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn text(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let view = run(&state, move |e| e.text(&id)).await?;
    Ok(Json(json!(view)))
}

fn wants_xml(headers: &HeaderMap, name: header::HeaderName) -> bool {
    headers
        .get(name)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("xml"))
}

async fn get_criteria(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let id = session_id(&id)?;
    let set = run(&state, move |e| e.criteria(&id)).await?;
    if wants_xml(&headers, header::ACCEPT) {
        return Ok(([(header::CONTENT_TYPE, "application/xml; charset=utf-8")], export_xml(&set)).into_response());
    }
    Ok(Json(json!({"criteria": set.criteria()})).into_response())
}

async fn put_criteria(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let looks_xml = body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'<');
    let set = if wants_xml(&headers, header::CONTENT_TYPE) || looks_xml {
        import_xml(&body)
    } else {
        import_json(&body)
    }
    .map_err(|e| ApiError::from(EngineError::Criteria(e)))?;
    let (set, removed) = run(&state, move |e| {
        let removed = e.set_criteria(&id, set.clone())?;
        Ok((set, removed))
    })
    .await?;
    Ok(Json(json!({"criteria": set.criteria(), "removed_annotation_ids": removed})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateBody {
    num_excerpts: Option<usize>,
}

async fn annotate(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let req: AnnotateBody = parse_json(&body)?;
    let annotations = run(&state, move |e| e.annotate_criterion(&id, &name, req.num_excerpts)).await?;
    Ok(Json(json!({"annotations": annotations})))
}

async fn compile(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let n = name.clone();
    let text = run(&state, move |e| e.compile_criterion(&id, &n)).await?;
    Ok(Json(json!({"criterion": name, "compilation": text})))
}

async fn viewpoints(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let n = name.clone();
    let text = run(&state, move |e| e.viewpoints_criterion(&id, &n)).await?;
    Ok(Json(json!({"criterion": name, "viewpoints": text})))
}

async fn recap(State(state): State<AppState>, Path((id, name)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let recap = run(&state, move |e| e.recap(&id, &name)).await?;
    let rendered = recap.render();
    Ok(Json(json!({"recap": recap, "rendered": rendered})))
}

async fn list_annotations(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let annotations = run(&state, move |e| e.annotations(&id)).await?;
    Ok(Json(json!({"annotations": annotations})))
}

#[derive(Deserialize)]
struct NewAnnotationBody {
    criterion: String,
    #[serde(flatten)]
    selection: Selection,
    #[serde(default)]
    sentiment: Option<Sentiment>,
    #[serde(default)]
    comment: Option<String>,
}

async fn add_annotation(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let id = session_id(&id)?;
    let req: NewAnnotationBody = parse_json(&body)?;
    let a = run(&state, move |e| {
        e.add_human_annotation(
            &id,
            &req.criterion,
            req.selection,
            req.sentiment.unwrap_or(Sentiment::Unset),
            req.comment.as_deref(),
        )
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!(a))).into_response())
}

async fn patch_annotation(
    State(state): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let patch: AnnotationPatch = parse_json(&body)?;
    let a = run(&state, move |e| e.patch_annotation(&id, &aid, patch)).await?;
    Ok(Json(json!(a)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FollowupBody {
    kind: OutputKind,
    #[serde(default)]
    question: Option<String>,
    /// Present when saving an answer obtained earlier; no model call is made.
    #[serde(default)]
    answer: Option<String>,
}

async fn followup(
    State(state): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let req: FollowupBody = parse_json(&body)?;
    match req.answer {
        Some(answer) => {
            let a = run(&state, move |e| e.save_output(&id, &aid, req.kind, req.question.as_deref(), &answer)).await?;
            Ok(Json(json!({"saved": true, "annotation": a})))
        }
        None => {
            let kind = req.kind;
            let answer =
                run(&state, move |e| e.annotation_followup(&id, &aid, req.kind, req.question.as_deref())).await?;
            Ok(Json(json!({"kind": kind, "answer": answer})))
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommentBody {
    comment: String,
}

async fn add_comment(
    State(state): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let req: CommentBody = parse_json(&body)?;
    let a = run(&state, move |e| e.add_comment(&id, &aid, &req.comment)).await?;
    Ok(Json(json!(a)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportBody {
    structure: ReportStructure,
}

async fn build_report(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let id = session_id(&id)?;
    let req: ReportBody = parse_json(&body)?;
    let report = run(&state, move |e| e.build_report(&id, req.structure)).await?;
    Ok(Json(json!(report)))
}

async fn report_html(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = session_id(&id)?;
    let html = run(&state, move |e| e.export_report_html(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/html; charset=utf-8")], html).into_response())
}
