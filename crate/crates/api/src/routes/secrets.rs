//! Secrets, always scoped to the calling user: another user's path is
//! simply absent.

use axum::extract::State;
use axum::http::StatusCode;
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fedplane_core::error::Error;
use serde::{Deserialize, Serialize};

use super::{Body, PathParam, QueryParam};
use crate::auth::Auth;
use crate::error::ApiResult;
use crate::AppState;

/// Exactly one of `value` (UTF-8 text) or `value_b64` (arbitrary bytes).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutSecretRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_b64: Option<String>,
}

impl PutSecretRequest {
    pub fn bytes(&self) -> Result<Vec<u8>, Error> {
        match (&self.value, &self.value_b64) {
            (Some(v), None) => Ok(v.as_bytes().to_vec()),
            (None, Some(b)) => STANDARD
                .decode(b)
                .map_err(|e| Error::Validation(format!("value_b64: {e}"))),
            _ => Err(Error::Validation("give exactly one of `value` or `value_b64`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretValue {
    pub path: String,
    pub value_b64: String,
    /// Present when the bytes are valid UTF-8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl SecretValue {
    pub fn new(path: String, bytes: Vec<u8>) -> Self {
        Self {
            path,
            value_b64: STANDARD.encode(&bytes),
            value: String::from_utf8(bytes).ok(),
        }
    }
}

pub async fn put(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(path): PathParam<String>,
    Body(req): Body<PutSecretRequest>,
) -> ApiResult<StatusCode> {
    let bytes = req.bytes()?;
    let platform = state.platform.clone();
    crate::blocking(move || platform.put_secret(&claims.user, &path, &bytes)).await?;
    Ok(StatusCode::NO_CONTENT)
}

pub async fn get_one(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(path): PathParam<String>,
) -> ApiResult<Json<SecretValue>> {
    let bytes = state.platform.get_secret(&claims.user, &path)?;
    Ok(Json(SecretValue::new(path, bytes)))
}

pub async fn delete(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(path): PathParam<String>,
) -> ApiResult<StatusCode> {
    state.platform.delete_secret(&claims.user, &path)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    pub prefix: String,
}

pub async fn list(
    State(state): State<AppState>,
    Auth(claims): Auth,
    QueryParam(q): QueryParam<ListQuery>,
) -> Json<Vec<String>> {
    Json(state.platform.list_secrets(&claims.user, &q.prefix))
}
