//! JSON API over the docstring checker.
//!
//! Routes: `POST /api/check`, `GET /api/languages`, `GET /healthz`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use tower_http::cors::{AllowOrigin, CorsLayer};

use doccheck_core::detect::{results_json, DetectError, Detector};
use doccheck_core::language::SupportLevel;
use doccheck_core::LanguageId;

/// Largest accepted source text in bytes.
pub const MAX_CODE_BYTES: usize = 1 << 20;
/// Request bodies may exceed the code limit by this much of JSON or
/// multipart framing.
const ENVELOPE_BYTES: usize = 64 << 10;

/// Shared read-only state. The detector is never mutated after startup.
pub struct AppState {
    pub detector: Detector,
    pub model_version: String,
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// `None` allows any origin.
    pub allowed_origin: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid allowed origin `{0}`")]
    InvalidOrigin(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn router(state: Arc<AppState>, options: &ServeOptions) -> Result<Router, ServeError> {
    let origin = match &options.allowed_origin {
        None => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|_| ServeError::InvalidOrigin(o.clone()))?),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/api/check", post(check))
        .route("/api/languages", get(languages))
        .route("/healthz", get(health))
        .layer(DefaultBodyLimit::max(MAX_CODE_BYTES + ENVELOPE_BYTES))
        .layer(cors)
        .with_state(state))
}

/// Bind `addr` and serve until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, options: &ServeOptions) -> Result<(), ServeError> {
    let app = router(state, options)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
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
            code: "malformed_request",
            message: message.into(),
        }
    }

    fn too_large() -> Self {
        ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            code: "payload_too_large",
            message: format!("code exceeds {MAX_CODE_BYTES} bytes"),
        }
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code,
            message: message.into(),
        }
    }

    /// Details go to the log under a fresh id; the client only sees the id.
    fn internal(err: &dyn std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        tracing::error!(%id, "internal error: {err}");
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: id,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Inner<'a> {
            code: &'a str,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Outer<'a> {
            error: Inner<'a>,
        }
        let body = Outer {
            error: Inner {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

/// JSON form of a check request.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCheckRequest {
    code: String,
    language: String,
    threshold: Option<f64>,
}

#[derive(Debug)]
struct CheckRequest {
    code: String,
    language: LanguageId,
    threshold: Option<f64>,
    /// Label used in diagnostics.
    source_name: String,
}

fn parse_language(name: &str) -> Result<LanguageId, ApiError> {
    name.parse()
        .map_err(|_| ApiError::unprocessable("unknown_language", format!("unknown language `{name}`")))
}

fn check_size(code: &str) -> Result<(), ApiError> {
    if code.len() > MAX_CODE_BYTES {
        Err(ApiError::too_large())
    } else {
        Ok(())
    }
}

async fn read_request(state: &Arc<AppState>, req: Request) -> Result<CheckRequest, ApiError> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    if content_type.starts_with("multipart/form-data") {
        let multipart = Multipart::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        return read_multipart(multipart).await;
    }
    if !content_type.starts_with("application/json") {
        return Err(ApiError::bad_request("expected application/json or multipart/form-data"));
    }
    let bytes = read_body(req.into_body()).await?;
    let parsed: JsonCheckRequest =
        serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
    check_size(&parsed.code)?;
    Ok(CheckRequest {
        language: parse_language(&parsed.language)?,
        code: parsed.code,
        threshold: parsed.threshold,
        source_name: "input".into(),
    })
}

async fn read_body(body: Body) -> Result<Bytes, ApiError> {
    to_bytes(body, MAX_CODE_BYTES + ENVELOPE_BYTES)
        .await
        .map_err(|_| ApiError::too_large())
}

/// Fields: `language`, optional `threshold`, and exactly one of `code` or
/// `file`.
async fn read_multipart(mut multipart: Multipart) -> Result<CheckRequest, ApiError> {
    let mut code: Option<String> = None;
    let mut file: Option<(String, String)> = None;
    let mut language = None;
    let mut threshold = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(ApiError::too_large()),
            Err(e) => return Err(ApiError::bad_request(e.body_text())),
        };
        let name = field.name().unwrap_or("").to_string();
        let file_name = field.file_name().map(str::to_string);
        let text = match field.text().await {
            Ok(t) => t,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(ApiError::too_large()),
            Err(e) => return Err(ApiError::bad_request(e.body_text())),
        };
        let duplicate = match name.as_str() {
            "code" => code.replace(text).is_some(),
            "file" => file.replace((file_name.unwrap_or_else(|| "upload".into()), text)).is_some(),
            "language" => language.replace(text).is_some(),
            "threshold" => {
                let value = text
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| ApiError::bad_request("threshold must be a number"))?;
                threshold.replace(value).is_some()
            }
            other => return Err(ApiError::bad_request(format!("unexpected field `{other}`"))),
        };
        if duplicate {
            return Err(ApiError::bad_request(format!("field `{name}` given twice")));
        }
    }
    let language = language.ok_or_else(|| ApiError::bad_request("missing field `language`"))?;
    let (code, source_name) = match (code, file) {
        (Some(c), None) => (c, "input".to_string()),
        (None, Some((name, text))) => (text, name),
        _ => return Err(ApiError::bad_request("exactly one of `code` and `file` is required")),
    };
    check_size(&code)?;
    Ok(CheckRequest {
        language: parse_language(&language)?,
        code,
        threshold,
        source_name,
    })
}

#[derive(Serialize)]
struct CheckResponse<'a> {
    results: &'a RawValue,
    diagnostics: &'a [String],
    model_version: &'a str,
}

async fn check(State(state): State<Arc<AppState>>, req: Request) -> Result<Response, ApiError> {
    let request = read_request(&state, req).await?;
    let worker = Arc::clone(&state);
    let report = tokio::task::spawn_blocking(move || {
        worker
            .detector
            .check_text(&request.source_name, request.language, &request.code, request.threshold)
    })
    .await
    .map_err(|e| ApiError::internal(&e))?
    .map_err(|e| match e {
        DetectError::InvalidThreshold(t) => {
            ApiError::unprocessable("invalid_threshold", format!("threshold {t} is outside (0, 1)"))
        }
        other => ApiError::internal(&other),
    })?;
    let results = results_json(&report.results);
    let raw = RawValue::from_string(results).map_err(|e| ApiError::internal(&e))?;
    let body = CheckResponse {
        results: &raw,
        diagnostics: &report.diagnostics,
        model_version: &state.model_version,
    };
    Ok(Json(body).into_response())
}

#[derive(Serialize)]
struct LanguageEntry {
    id: LanguageId,
    supported: SupportLevel,
}

async fn languages() -> Json<Vec<LanguageEntry>> {
    Json(
        LanguageId::ALL
            .into_iter()
            .map(|id| LanguageEntry {
                id,
                supported: id.support(),
            })
            .collect(),
    )
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}
