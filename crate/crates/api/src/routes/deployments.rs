//! Deployments, completion reports, snapshots and restore.

use std::collections::BTreeSet;

use axum::extract::State;
use axum::response::Response;
use axum::Json;
use fedplane_core::auth::Claims;
use fedplane_core::error::{Error, Result};
use fedplane_core::platform::PlatformState;
use fedplane_core::scheduler::{Job, JobKind, JobSpec, JobState, Sidecar, Snapshot};
use fedplane_core::types::{Capacity, JobId, ModuleId, SnapshotId};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{created, Body, PathParam, QueryParam};
use crate::auth::Auth;
use crate::error::ApiResult;
use crate::AppState;

/// Owner and VO come from the token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub kind: JobKind,
    pub module: ModuleId,
    pub resources: Capacity,
    #[serde(default)]
    pub sidecars: BTreeSet<Sidecar>,
    #[serde(default)]
    pub dataset_doi: Option<String>,
}

/// Owners see their jobs, VO admins their VO's jobs, operators all jobs.
fn can_see(state: &PlatformState, claims: &Claims, job: &Job) -> bool {
    claims.admin
        || job.spec.owner == claims.user
        || (job.spec.vo == claims.vo
            && state
                .federation
                .vo(&claims.vo)
                .is_ok_and(|vo| vo.admins.contains(&claims.user)))
}

fn visible_job(state: &PlatformState, claims: &Claims, id: &JobId) -> Result<Job> {
    state
        .scheduler
        .job(id)
        .ok()
        .filter(|j| can_see(state, claims, j))
        .cloned()
        .ok_or_else(|| Error::NotFound(format!("deployment {id}")))
}

pub async fn submit(
    State(state): State<AppState>,
    Auth(claims): Auth,
    Body(req): Body<SubmitRequest>,
) -> ApiResult<Response> {
    let spec = JobSpec {
        owner: claims.user.clone(),
        vo: claims.vo.clone(),
        kind: req.kind,
        module: req.module,
        resources: req.resources,
        sidecars: req.sidecars,
        dataset_doi: req.dataset_doi,
    };
    let id = state.platform.submit(spec, &claims)?;
    Ok(created(state.platform.read(|s| visible_job(s, &claims, &id))?))
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub state: Option<JobState>,
}

pub async fn list(
    State(state): State<AppState>,
    Auth(claims): Auth,
    QueryParam(q): QueryParam<ListQuery>,
) -> Json<Vec<Job>> {
    Json(state.platform.read(|s| {
        s.scheduler
            .jobs()
            .filter(|j| can_see(s, &claims, j))
            .filter(|j| q.state.is_none_or(|st| j.state == st))
            .cloned()
            .collect()
    }))
}

pub async fn get_one(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<JobId>,
) -> ApiResult<Json<Job>> {
    Ok(Json(state.platform.read(|s| visible_job(s, &claims, &id))?))
}

pub async fn stop(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<JobId>,
) -> ApiResult<Json<Job>> {
    state.platform.read(|s| visible_job(s, &claims, &id))?;
    Ok(Json(state.platform.stop(&id, &claims)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub success: bool,
    /// Tracked metrics; recorded as a provenance tracking fragment.
    #[serde(default)]
    pub metrics: Option<Map<String, Value>>,
}

pub async fn complete(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<JobId>,
    Body(req): Body<CompleteRequest>,
) -> ApiResult<Json<Job>> {
    state.platform.read(|s| visible_job(s, &claims, &id))?;
    Ok(Json(state.platform.complete(&id, req.success, req.metrics, &claims)?))
}

pub async fn snapshot(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<JobId>,
) -> ApiResult<Response> {
    state.platform.read(|s| visible_job(s, &claims, &id))?;
    let sid = state.platform.snapshot(&id, &claims)?;
    Ok(created(state.platform.read(|s| s.scheduler.snapshot_record(&sid).cloned())?))
}

fn can_see_snapshot(claims: &Claims, snap: &Snapshot) -> bool {
    claims.admin || snap.spec_copy.owner == claims.user
}

pub async fn snapshots(State(state): State<AppState>, Auth(claims): Auth) -> Json<Vec<Snapshot>> {
    Json(state.platform.read(|s| {
        s.scheduler
            .snapshots()
            .filter(|snap| can_see_snapshot(&claims, snap))
            .cloned()
            .collect()
    }))
}

pub async fn restore(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<SnapshotId>,
) -> ApiResult<Response> {
    state.platform.read(|s| {
        s.scheduler
            .snapshot_record(&id)
            .ok()
            .filter(|snap| can_see_snapshot(&claims, snap))
            .map(|_| ())
            .ok_or_else(|| Error::NotFound(format!("snapshot {id}")))
    })?;
    let job = state.platform.restore(&id, &claims)?;
    Ok(created(state.platform.read(|s| visible_job(s, &claims, &job))?))
}
