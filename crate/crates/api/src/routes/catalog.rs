//! Catalog listing, registration, validation and interop export.

use axum::body::Bytes;
use axum::extract::State;
use axum::response::Response;
use axum::Json;
use fedplane_core::catalog::schema::schema_document;
use fedplane_core::catalog::{
    parse_document, validate_value, CatalogFilter, InteropProfile, ModuleRecord, RecordKind, ValidationReport, Visibility,
};
use fedplane_core::error::Error;
use fedplane_core::platform::{Command, Outcome};
use fedplane_core::types::ModuleId;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{created, visible_record, Body, PathParam, QueryParam};
use crate::auth::Auth;
use crate::error::{ApiError, ApiResult};
use crate::AppState;

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub kind: Option<RecordKind>,
    /// Comma-separated; every tag must be present.
    pub tags: Option<String>,
    pub text: Option<String>,
}

pub async fn list(
    State(state): State<AppState>,
    Auth(claims): Auth,
    QueryParam(q): QueryParam<ListQuery>,
) -> Json<Vec<ModuleRecord>> {
    let filter = CatalogFilter {
        kind: q.kind,
        tags: q
            .tags
            .map(|t| t.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default(),
        text: q.text,
    };
    Json(state.platform.read(|s| {
        let predicate = s.federation.vo(&claims.vo).ok().and_then(|vo| vo.catalog_filter.as_ref());
        s.catalog.list(&claims.vo, predicate, &filter).into_iter().cloned().collect()
    }))
}

/// Metadata as a JSON object, or as JSON/YAML document text.
fn metadata_value(doc: Value) -> Result<Value, Error> {
    match doc {
        Value::String(text) => parse_document(&text).map_err(Error::Validation),
        other => Ok(other),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    #[serde(default = "default_kind")]
    pub kind: RecordKind,
    pub metadata: Value,
    #[serde(default)]
    pub visibility: Visibility,
}

fn default_kind() -> RecordKind {
    RecordKind::Module
}

pub async fn register(
    State(state): State<AppState>,
    _auth: Auth,
    Body(req): Body<RegisterRequest>,
) -> ApiResult<Response> {
    let cmd = Command::RegisterModule {
        kind: req.kind,
        metadata: metadata_value(req.metadata)?,
        visibility: req.visibility,
    };
    let Outcome::ModuleId(id) = state.platform.execute(cmd)? else {
        unreachable!("register_module yields a module id")
    };
    let record = state.platform.read(|s| s.catalog.get(&id).cloned())?;
    Ok(created(record))
}

pub async fn schema(_auth: Auth) -> Json<Value> {
    Json(schema_document())
}

pub async fn get_one(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<ModuleId>,
) -> ApiResult<Json<ModuleRecord>> {
    Ok(Json(state.platform.read(|s| visible_record(s, &claims, &id).cloned())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetadataRequest {
    pub metadata: Value,
}

pub async fn update(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<ModuleId>,
    Body(req): Body<MetadataRequest>,
) -> ApiResult<Json<ModuleRecord>> {
    state.platform.read(|s| visible_record(s, &claims, &id).map(|_| ()))?;
    let cmd = Command::UpdateModule {
        id,
        metadata: metadata_value(req.metadata)?,
    };
    let Outcome::Record(record) = state.platform.execute(cmd)? else {
        unreachable!("update_module yields a record")
    };
    Ok(Json(*record))
}

/// Validates a candidate document for the record when a body is given,
/// else re-validates the stored metadata. Never mutates.
/// An absent `metadata` validates the stored record.
#[derive(Debug, Deserialize)]
struct ValidateRequest {
    metadata: Option<Value>,
}

pub async fn validate(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<ModuleId>,
    body: Bytes,
) -> ApiResult<Json<ValidationReport>> {
    let stored = state.platform.read(|s| visible_record(s, &claims, &id).map(|r| r.metadata.to_value()))?;
    let doc = if body.iter().all(u8::is_ascii_whitespace) {
        stored
    } else {
        let req: ValidateRequest = serde_json::from_slice(&body)
            .map_err(|e| ApiError::rejected(axum::http::StatusCode::BAD_REQUEST, e.to_string()))?;
        match req.metadata {
            Some(m) => metadata_value(m)?,
            None => stored,
        }
    };
    Ok(Json(validate_value(&doc)))
}

pub async fn export(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<ModuleId>,
) -> ApiResult<Json<InteropProfile>> {
    Ok(Json(state.platform.read(|s| {
        visible_record(s, &claims, &id)?;
        s.catalog.export_interop(&id)
    })?))
}
