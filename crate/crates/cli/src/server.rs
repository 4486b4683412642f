//! Read-only HTTP service over registered datasets.
//!
//! Every dataset in the registry is loaded (and built if needed) once at
//! startup; requests only read from that snapshot.
//!
//! | route | response |
//! |-------|----------|
//! | `GET /api/datasets` | summaries of every dataset |
//! | `GET /api/datasets/{id}` | info and schema |
//! | `GET /api/datasets/{id}/rows?split&offset&limit` | one page of rendered rows |
//! | `GET /api/datasets/{id}/card` | current card text and parsed tags |
//! | `GET /api/search?lang&task&task_id&license&size&multilinguality` | matching summaries |
//!
//! Errors are JSON objects with an `error` code: `unknown_dataset`,
//! `unknown_split` and `no_card` (404), `bad_request` and
//! `unknown_vocabulary_value` (400), `not_found` (404) for other paths.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value as JsonValue};
use tower_http::cors::{Any, CorsLayer};

use dataforge::builder::{DatasetInfo, DatasetLoader};
use dataforge::registry::{matches_filter, parse_card, Registry, SearchFilter, TagKey, TagSet};
use dataforge::schema::render_row;
use dataforge::Table;

/// Most rows a single request may return.
pub const MAX_LIMIT: u64 = 1000;
pub const DEFAULT_LIMIT: u64 = 100;

pub struct LoadedDataset {
    pub info: DatasetInfo,
    pub splits: BTreeMap<String, Table>,
    pub tags: TagSet,
    pub card: Option<(u32, String)>,
}

pub struct AppState {
    pub registry: Registry,
    pub datasets: BTreeMap<String, LoadedDataset>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Registry(#[from] dataforge::registry::RegistryError),
}

impl AppState {
    /// Loads every registered dataset. Datasets that fail to build are
    /// logged and left out.
    pub fn load(registry_dir: &Path, cache_dir: &Path) -> Result<Self, ServeError> {
        let registry = Registry::open(registry_dir);
        let loader = DatasetLoader::new(registry_dir, cache_dir);
        let mut datasets = BTreeMap::new();
        for entry in registry.entries()? {
            let dd = match loader.load(&entry.id) {
                Ok(dd) => dd,
                Err(e) => {
                    log::warn!("skipping {}: {e}", entry.id);
                    continue;
                }
            };
            let card = match registry.card_text(&entry.id)? {
                Some(text) => Some((entry.card_revision, text)),
                None => None,
            };
            let tags = card
                .as_ref()
                .and_then(|(_, t)| parse_card(t).ok())
                .map(|c| c.tags)
                .unwrap_or_default();
            datasets.insert(
                entry.id.clone(),
                LoadedDataset {
                    info: dd.info,
                    splits: dd.splits,
                    tags,
                    card,
                },
            );
        }
        Ok(AppState { registry, datasets })
    }
}

struct ApiError {
    status: StatusCode,
    body: JsonValue,
}

impl ApiError {
    fn new(status: StatusCode, code: &str) -> Self {
        ApiError {
            status,
            body: json!({ "error": code }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({"error": "bad_request", "message": message.into()}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<JsonValue>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET])
        .allow_headers(Any);
    Router::new()
        .route("/api/datasets", get(list_datasets))
        .route("/api/datasets/{*rest}", get(dataset_route))
        .route("/api/search", get(search))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found") })
        .layer(cors)
        .with_state(state)
}

fn summary(id: &str, d: &LoadedDataset) -> JsonValue {
    let splits: BTreeMap<&str, u64> = d.info.splits.iter().map(|(k, v)| (k.as_str(), v.num_rows)).collect();
    json!({
        "id": id,
        "description": d.info.description,
        "version": d.info.version,
        "tags": d.tags,
        "splits": splits,
        "num_rows": splits.values().sum::<u64>(),
    })
}

async fn list_datasets(State(s): State<Arc<AppState>>) -> Json<JsonValue> {
    Json(JsonValue::Array(
        s.datasets.iter().map(|(id, d)| summary(id, d)).collect(),
    ))
}

/// Ids contain `/`, so one wildcard route serves info, rows and card.
async fn dataset_route(
    State(s): State<Arc<AppState>>,
    UrlPath(rest): UrlPath<String>,
    Query(params): Query<Vec<(String, String)>>,
) -> ApiResult {
    let rest = rest.trim_end_matches('/');
    if let Some(d) = s.datasets.get(rest) {
        return Ok(info(rest, d));
    }
    let lookup = |id: &str| {
        s.datasets
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_dataset"))
    };
    if let Some(id) = rest.strip_suffix("/rows") {
        return rows(id, lookup(id)?, &params);
    }
    if let Some(id) = rest.strip_suffix("/card") {
        return card(id, lookup(id)?);
    }
    Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_dataset"))
}

fn info(id: &str, d: &LoadedDataset) -> Json<JsonValue> {
    let schema = d
        .splits
        .values()
        .next()
        .map(|t| t.schema().to_json_value())
        .unwrap_or(JsonValue::Null);
    Json(json!({
        "id": id,
        "description": d.info.description,
        "citation": d.info.citation,
        "version": d.info.version,
        "license": d.info.license,
        "builder_fingerprint": d.info.builder_fingerprint,
        "splits": d.info.splits,
        "recommended_metrics": d.info.recommended_metrics,
        "tags": d.tags,
        "schema": schema,
    }))
}

fn parse_u64(params: &[(String, String)], key: &str) -> Result<Option<u64>, ApiError> {
    match params.iter().rev().find(|(k, _)| k == key) {
        None => Ok(None),
        Some((_, v)) => v
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer"))),
    }
}

fn rows(id: &str, d: &LoadedDataset, params: &[(String, String)]) -> ApiResult {
    for (k, _) in params {
        if !matches!(k.as_str(), "split" | "offset" | "limit") {
            return Err(ApiError::bad_request(format!("unknown parameter {k:?}")));
        }
    }
    let split = params
        .iter()
        .rev()
        .find(|(k, _)| k == "split")
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| ApiError::bad_request("split is required"))?;
    let table = d
        .splits
        .get(split)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_split"))?;
    let offset = parse_u64(params, "offset")?.unwrap_or(0);
    let limit = parse_u64(params, "limit")?.unwrap_or(DEFAULT_LIMIT);
    if limit == 0 {
        return Err(ApiError::bad_request("limit must be at least 1"));
    }
    let limit = limit.min(MAX_LIMIT);
    let total = table.num_rows();
    if offset > total {
        return Err(ApiError::bad_request(format!(
            "offset {offset} is past the end ({total} rows)"
        )));
    }
    let end = offset.saturating_add(limit).min(total);
    let rows = table.slice(offset, end).map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({"error": "storage", "message": e.to_string()}),
    })?;
    let schema = table.schema();
    Ok(Json(json!({
        "dataset": id,
        "split": split,
        "offset": offset,
        "limit": limit,
        "total": total,
        "rows": rows.iter().map(|r| render_row(schema, r)).collect::<Vec<_>>(),
    })))
}

fn card(id: &str, d: &LoadedDataset) -> ApiResult {
    let (revision, text) = d
        .card
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_card"))?;
    Ok(Json(json!({
        "id": id,
        "revision": revision,
        "markdown": text,
        "tags": d.tags,
    })))
}

fn search_key(name: &str) -> Option<TagKey> {
    Some(match name {
        "lang" | "language" | "languages" => TagKey::Languages,
        "task" | "task_category" | "task_categories" => TagKey::TaskCategories,
        "task_id" | "task_ids" => TagKey::TaskIds,
        "license" | "licenses" => TagKey::Licenses,
        "size" | "size_category" => TagKey::SizeCategory,
        "multilinguality" => TagKey::Multilinguality,
        _ => return None,
    })
}

/// Parses repeated or comma-separated query values into a filter.
pub fn parse_search_params(params: &[(String, String)]) -> Result<SearchFilter, String> {
    let mut filter = SearchFilter::new();
    for (k, v) in params {
        let key = search_key(k).ok_or_else(|| format!("unknown search parameter {k:?}"))?;
        let vals = filter.entry(key).or_default();
        vals.extend(v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned));
    }
    Ok(filter)
}

async fn search(State(s): State<Arc<AppState>>, Query(params): Query<Vec<(String, String)>>) -> ApiResult {
    let filter = parse_search_params(&params).map_err(ApiError::bad_request)?;
    s.registry.check_filter(&filter).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        body: json!({"error": "unknown_vocabulary_value", "message": e.to_string()}),
    })?;
    Ok(Json(JsonValue::Array(
        s.datasets
            .iter()
            .filter(|(_, d)| matches_filter(&d.tags, &filter))
            .map(|(id, d)| summary(id, d))
            .collect(),
    )))
}

/// Binds `port` on all interfaces and serves until interrupted.
pub async fn serve(state: Arc<AppState>, port: u16) -> Result<(), ServeError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortInUse(port)
        } else {
            ServeError::Io(e)
        }
    })?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
