//! Serverless endpoints, async jobs and composed pipelines, scoped to the
//! creating VO.

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fedplane_core::auth::Claims;
use fedplane_core::error::{Error, Result};
use fedplane_core::inference::{DagSpec, Endpoint, EndpointSpec, PipelineDag};
use fedplane_core::platform::{AsyncStatus, DagResult, InvokeResult, PlatformState};
use fedplane_core::types::{AsyncJobId, DagId, EndpointId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{created, visible_record, Body, PathParam};
use crate::auth::Auth;
use crate::error::ApiResult;
use crate::{blocking, AppState};

fn visible_endpoint(state: &PlatformState, claims: &Claims, id: &EndpointId) -> Result<Endpoint> {
    state
        .inference
        .endpoint(id)
        .ok()
        .filter(|e| claims.admin || e.vo == claims.vo)
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("endpoint {id}")))
}

pub async fn create(
    State(state): State<AppState>,
    Auth(claims): Auth,
    Body(spec): Body<EndpointSpec>,
) -> ApiResult<Response> {
    state.platform.read(|s| visible_record(s, &claims, &spec.module).map(|_| ()))?;
    let id = state.platform.create_endpoint(spec, &claims)?;
    Ok(created(state.platform.read(|s| visible_endpoint(s, &claims, &id))?))
}

pub async fn list(State(state): State<AppState>, Auth(claims): Auth) -> Json<Vec<Endpoint>> {
    Json(state.platform.read(|s| {
        s.inference
            .endpoints()
            .filter(|e| claims.admin || e.vo == claims.vo)
            .cloned()
            .collect()
    }))
}

pub async fn get_one(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<EndpointId>,
) -> ApiResult<Json<Endpoint>> {
    Ok(Json(state.platform.read(|s| visible_endpoint(s, &claims, &id))?))
}

/// The request body is the model input.
pub async fn invoke(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<EndpointId>,
    Body(payload): Body<Value>,
) -> ApiResult<Json<InvokeResult>> {
    let platform = state.platform.clone();
    Ok(Json(blocking(move || platform.invoke(&id, &claims, &payload)).await?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsyncRequest {
    pub endpoint: EndpointId,
    pub payload: Value,
}

pub async fn submit_async(
    State(state): State<AppState>,
    Auth(claims): Auth,
    Body(req): Body<AsyncRequest>,
) -> ApiResult<Response> {
    let platform = state.platform.clone();
    let status = blocking(move || {
        let id = platform.submit_async(&req.endpoint, &claims, &req.payload)?;
        platform.async_status(&id, &claims)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

pub async fn async_status(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<AsyncJobId>,
) -> ApiResult<Json<AsyncStatus>> {
    Ok(Json(state.platform.async_status(&id, &claims)?))
}

fn visible_dag(state: &PlatformState, claims: &Claims, id: &DagId) -> Result<PipelineDag> {
    state
        .inference
        .dag(id)
        .ok()
        .filter(|d| claims.admin || d.vo == claims.vo)
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("pipeline {id}")))
}

pub async fn compose(
    State(state): State<AppState>,
    Auth(claims): Auth,
    Body(spec): Body<DagSpec>,
) -> ApiResult<Response> {
    let id = state.platform.compose(spec, &claims)?;
    Ok(created(state.platform.read(|s| visible_dag(s, &claims, &id))?))
}

pub async fn get_dag(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<DagId>,
) -> ApiResult<Json<PipelineDag>> {
    Ok(Json(state.platform.read(|s| visible_dag(s, &claims, &id))?))
}

pub async fn invoke_dag(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<DagId>,
    Body(payload): Body<Value>,
) -> ApiResult<Json<DagResult>> {
    let platform = state.platform.clone();
    Ok(Json(blocking(move || platform.invoke_dag(&id, &claims, payload)).await?))
}
