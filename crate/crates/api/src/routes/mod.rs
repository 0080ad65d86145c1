//! Route handlers, grouped by resource.

pub mod admin;
pub mod catalog;
pub mod deployments;
pub mod inference;
pub mod misc;
pub mod provenance;
pub mod secrets;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fedplane_core::auth::Claims;
use fedplane_core::catalog::ModuleRecord;
use fedplane_core::error::{Error, Result};
use fedplane_core::platform::PlatformState;
use fedplane_core::types::ModuleId;
use serde::Serialize;

use crate::error::ApiError;

/// JSON body extractor whose rejections use the uniform error body.
#[derive(axum::extract::FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct Body<T>(pub T);

/// Path extractor whose rejections use the uniform error body.
#[derive(axum::extract::FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
pub struct PathParam<T>(pub T);

/// Query extractor whose rejections use the uniform error body.
#[derive(axum::extract::FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct QueryParam<T>(pub T);

pub fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, Json(value)).into_response()
}

/// Records outside the caller's VO visibility are reported as missing;
/// operators see everything.
pub fn visible_record<'a>(state: &'a PlatformState, claims: &Claims, id: &ModuleId) -> Result<&'a ModuleRecord> {
    let record = state.catalog.get(id)?;
    if claims.admin || record.visibility.includes(&claims.vo) {
        Ok(record)
    } else {
        Err(Error::NotFound(format!("module {id}")))
    }
}
