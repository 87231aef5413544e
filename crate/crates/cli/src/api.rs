//! Read-only JSON query API.
//!
//! Routes, all `GET`:
//!
//! | path | body |
//! |------|------|
//! | `/records/{id}[?version=n]` | canonical record JSON |
//! | `/records[?view=role&q=terms&category=&elements=&relation=&status=]` | record summaries |
//! | `/elements` | the 23 content element definitions |
//! | `/health` | store integrity report (503 when unhealthy) |
//!
//! Errors are JSON objects with an `error` field: 400 for malformed
//! parameters, 404 for unknown records and paths, 405 for other methods.
//! The store is opened read-only and its index is reloaded before list and
//! health requests, so records written by a concurrent CLI process show up
//! without a restart.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use bimcore::model::{builtin_element_defs, RecordId};
use bimcore::registry::{RegistryStore, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::{
    parse_category, parse_element_list, parse_relation, parse_role, parse_status, ViewParams,
};

pub const CONTENT_TYPE: &str = "application/json; charset=utf-8";

/// Methods the router answers. Everything else is refused.
pub const ALLOWED_METHODS: [Method; 2] = [Method::GET, Method::HEAD];

/// Route patterns registered on the router.
pub const ROUTES: [&str; 4] = ["/records", "/records/{id}", "/elements", "/health"];

type Shared = Arc<Mutex<RegistryStore>>;

fn json_body(status: StatusCode, body: String) -> Response {
    let mut r = (status, body).into_response();
    r.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static(CONTENT_TYPE));
    r
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    json_body(
        status,
        serde_json::to_string(value).expect("responses serialize"),
    )
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    json_response(
        status,
        &json!({ "error": message.into(), "status": status.as_u16() }),
    )
}

fn lock(store: &Shared) -> MutexGuard<'_, RegistryStore> {
    store
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Builds the router over a store. The store should be opened read-only.
pub fn router(store: RegistryStore) -> Router {
    let shared: Shared = Arc::new(Mutex::new(store));
    Router::new()
        .route(ROUTES[0], get(list_records))
        .route(ROUTES[1], get(get_record))
        .route(ROUTES[2], get(elements))
        .route(ROUTES[3], get(health))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(shared)
}

/// Serves the API on `listener` until interrupted.
pub async fn serve(listener: TcpListener, store: RegistryStore) -> std::io::Result<()> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such resource")
}

async fn method_not_allowed() -> Response {
    let mut r = error(
        StatusCode::METHOD_NOT_ALLOWED,
        "read-only API; only GET is supported",
    );
    r.headers_mut()
        .insert(header::ALLOW, HeaderValue::from_static("GET, HEAD"));
    r
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionParam {
    version: Option<u64>,
}

async fn get_record(
    State(store): State<Shared>,
    Path(id): Path<String>,
    params: Result<Query<VersionParam>, QueryRejection>,
) -> Response {
    let Query(params) = match params {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let Ok(id) = RecordId::new(id) else {
        return error(StatusCode::BAD_REQUEST, "malformed record id");
    };
    let result = lock(&store).get_record(&id, params.version);
    match result {
        Ok(record) => json_body(StatusCode::OK, record.to_json().expect("records serialize")),
        Err(StoreError::NotFound(what)) => {
            error(StatusCode::NOT_FOUND, format!("not found: {what}"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Query parameters of `GET /records`. Without `view` every record is listed.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListParams {
    pub view: Option<String>,
    pub q: Option<String>,
    pub category: Option<String>,
    pub elements: Option<String>,
    pub relation: Option<String>,
    pub status: Option<String>,
}

impl ListParams {
    /// The view these parameters describe, `None` for a plain listing.
    pub fn view_params(&self) -> Result<Option<ViewParams>, String> {
        let Some(role) = &self.view else {
            let filtered = self.category.is_some()
                || self.elements.is_some()
                || self.relation.is_some()
                || self.status.is_some()
                || self.q.is_some();
            return if filtered {
                Err("filters and q require a view".to_owned())
            } else {
                Ok(None)
            };
        };
        let mut p = ViewParams::new(parse_role(role)?);
        p.category = self.category.as_deref().map(parse_category).transpose()?;
        p.elements = self
            .elements
            .as_deref()
            .map(parse_element_list)
            .transpose()?
            .unwrap_or_default();
        p.relation = self.relation.as_deref().map(parse_relation).transpose()?;
        p.status = self.status.as_deref().map(parse_status).transpose()?;
        Ok(Some(p))
    }
}

async fn list_records(
    State(store): State<Shared>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> Response {
    let Query(params) = match params {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let view = match params.view_params() {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let mut store = lock(&store);
    if let Err(e) = store.refresh() {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let summaries = match view {
        Some(v) => store.query(&v.to_view(), params.q.as_deref()),
        None => store.list(),
    };
    json_response(StatusCode::OK, &summaries)
}

async fn elements() -> Response {
    json_response(StatusCode::OK, &builtin_element_defs())
}

async fn health(State(store): State<Shared>) -> Response {
    let mut store = lock(&store);
    if let Err(e) = store.refresh() {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let report = store.integrity_check();
    let healthy = report.is_healthy();
    let body = json!({
        "healthy": healthy,
        "records": store.record_count(),
        "issues": report.issues,
    });
    let status = if healthy {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    json_response(status, &body)
}
