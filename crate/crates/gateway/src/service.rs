// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Tenant-facing HTTP endpoints.
//!
//! | route              | body / query                         | answer                    |
//! |--------------------|--------------------------------------|---------------------------|
//! | POST /authenticate | JSON `{login, secret}`               | `{token, university_key}` |
//! | POST /upload       | `?table=&mode=`, multipart `file`    | batch result JSON         |
//! | GET  /reports      |                                      | report catalog JSON       |
//! | GET  /report/{id}  | report params, `format=csv|json|table` | serialized report       |
//!
//! Every route except `/authenticate` needs `Authorization: Bearer <token>`
//! and acts only on the token's tenant. A `university_key` in a request is
//! ignored.

use std::sync::Arc;
use std::time::UNIX_EPOCH;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;
use unimart_core::cube::CubeError;
use unimart_core::etl::{BatchResult, EtlMode};
use unimart_core::olap::{OlapError, ReportDef};
use unimart_core::schema::TENANT_ATTRIBUTE;
use unimart_core::TenantContext;

use crate::registry::TenantRegistry;
use crate::session::Sessions;
use crate::warehouse::{millis, Warehouse};

pub struct AppState {
    pub warehouse: Warehouse,
    pub registry: TenantRegistry,
    pub sessions: Sessions,
}

impl AppState {
    pub fn new(warehouse: Warehouse, registry: TenantRegistry) -> Self {
        let sessions = Sessions::new(warehouse.config.session_ttl);
        AppState {
            warehouse,
            registry,
            sessions,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("request failed: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<OlapError> for ApiError {
    fn from(e: OlapError) -> Self {
        let status = match &e {
            OlapError::UnknownReport(_) => StatusCode::NOT_FOUND,
            OlapError::MissingParameter(_)
            | OlapError::UnknownParameter(_)
            | OlapError::UnknownAttribute { .. }
            | OlapError::MaskOutOfRange { .. } => StatusCode::BAD_REQUEST,
            OlapError::Cube(CubeError::NotBuilt { .. }) => StatusCode::SERVICE_UNAVAILABLE,
            _ => return ApiError::internal(e),
        };
        ApiError::new(status, e.to_string())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/authenticate", post(authenticate))
        .route("/upload", post(upload).layer(DefaultBodyLimit::disable()))
        .route("/reports", get(reports))
        .route("/report/{id}", get(report))
        .with_state(state)
}

fn session(state: &AppState, headers: &HeaderMap) -> Result<TenantContext, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .and_then(|token| state.sessions.resolve(token.trim()))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid session token"))
}

#[derive(Deserialize)]
struct Credentials {
    login: String,
    secret: String,
}

async fn authenticate(
    State(state): State<Arc<AppState>>,
    Json(c): Json<Credentials>,
) -> Result<Json<Value>, ApiError> {
    let tenant = state
        .registry
        .authenticate(&c.login, &c.secret)
        .map_err(|e| ApiError::new(StatusCode::UNAUTHORIZED, e.to_string()))?;
    let ctx = state.sessions.issue(tenant);
    Ok(Json(json!({
        "token": ctx.session_id,
        "university_key": ctx.university_key,
        "expires_in_s": state.sessions.ttl().as_secs(),
    })))
}

#[derive(Serialize)]
struct ErrorLine {
    line_number: u64,
    tenant_key_value: Option<String>,
    reason: String,
}

/// JSON form of a batch result, shared by the CLI.
pub fn batch_json(table: &str, r: &BatchResult) -> Value {
    let errors: Vec<ErrorLine> = r
        .report()
        .map(|rep| {
            rep.entries
                .iter()
                .map(|e| ErrorLine {
                    line_number: e.line_number,
                    tenant_key_value: e.tenant_key_value.clone(),
                    reason: e.reason.clone(),
                })
                .collect()
        })
        .unwrap_or_default();
    json!({
        "table": table,
        "batch_id": r.segment().map(|s| s.batch_id),
        "rows_in": r.rows_in,
        "rows_out": r.rows_out,
        "n_m": r.n_m,
        "s_split": r.s_split,
        "effective_ms": millis(r.effective_time),
        "cumulative_ms": millis(r.cumulative_time),
        "errors": errors,
    })
}

async fn upload(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(params): Query<Vec<(String, String)>>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let ctx = session(&state, &headers)?;
    let param = |name: &str| {
        params
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
    };
    let table = param("table")
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing `table` parameter"))?;
    let mode: EtlMode = match param("mode") {
        Some(m) => m
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
        None => EtlMode::Case2,
    };
    state
        .warehouse
        .store
        .schema()
        .table(&table)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;

    let limit = state.warehouse.config.max_upload_bytes;
    let staged = tempfile::Builder::new()
        .prefix("upload-")
        .suffix(".csv")
        .tempfile_in(state.warehouse.store.staging_dir())
        .map_err(ApiError::internal)?;
    let mut file = tokio::fs::File::from_std(staged.reopen().map_err(ApiError::internal)?);
    let mut received = 0u64;
    let mut found = false;
    while let Some(mut field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    {
        if field.name() != Some("file") {
            continue;
        }
        found = true;
        while let Some(chunk) = field
            .chunk()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
        {
            received += chunk.len() as u64;
            if received > limit {
                return Err(ApiError {
                    status: StatusCode::PAYLOAD_TOO_LARGE,
                    body: json!({ "error": "upload exceeds limit", "limit_bytes": limit }),
                });
            }
            file.write_all(&chunk).await.map_err(ApiError::internal)?;
        }
        break;
    }
    if !found {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "missing multipart field `file`",
        ));
    }
    file.flush().await.map_err(ApiError::internal)?;
    drop(file);

    let st = Arc::clone(&state);
    let t = table.clone();
    let result = tokio::task::spawn_blocking(move || {
        let r = st
            .warehouse
            .ingest(&ctx.university_key, &t, staged.path(), mode);
        drop(staged);
        r
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("{e:#}")))?;
    let status = if result.segment().is_some() {
        StatusCode::OK
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    Ok((status, Json(batch_json(&table, &result))).into_response())
}

async fn reports(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let ctx = session(&state, &headers)?;
    let list: Vec<Value> = state
        .warehouse
        .olap
        .list_reports(&ctx)
        .iter()
        .map(|d: &ReportDef| {
            json!({
                "id": d.id,
                "title": d.title,
                "params": d.params,
                "columns": d.columns.iter().map(|c| c.header()).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(Json(json!({ "reports": list })))
}

async fn report(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(query): Query<Vec<(String, String)>>,
) -> Result<Response, ApiError> {
    let ctx = session(&state, &headers)?;
    let mut format = "csv".to_string();
    let mut params = Vec::new();
    for (k, v) in query {
        match k.as_str() {
            "format" => format = v,
            // Scope comes from the session only.
            TENANT_ATTRIBUTE => {}
            _ => params.push((k, v)),
        }
    }
    let st = Arc::clone(&state);
    let result =
        tokio::task::spawn_blocking(move || st.warehouse.olap.generate_report(&ctx, &id, &params))
            .await
            .map_err(ApiError::internal)??;
    let text =
        |body: String, mime: &'static str| ([(header::CONTENT_TYPE, mime)], body).into_response();
    Ok(match format.as_str() {
        "csv" => text(result.to_csv(), "text/csv; charset=utf-8"),
        "table" => text(result.to_table(), "text/plain; charset=utf-8"),
        "json" => Json(json!({
            "report_id": result.report_id,
            "columns": result.columns,
            "rows": result.rows,
            "cube_version": result.cube_version,
            "generated_at_ms": result.generated_at.duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
            "warning": result.warning,
        }))
        .into_response(),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown format `{other}`"))),
    })
}

/// Serves `state` on `listener` until `shutdown` resolves, refreshing cubes
/// in the background.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let refresher = unimart_core::cube::CubeRefresher::spawn(
        Arc::clone(&state.warehouse.cubes),
        state.warehouse.config.cube_refresh_interval,
    );
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    drop(refresher);
    Ok(())
}
