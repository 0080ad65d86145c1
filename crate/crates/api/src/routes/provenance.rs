//! Quality pipeline runs, provenance graphs, queries and tracking
//! fragments.

use std::collections::BTreeSet;

use axum::extract::State;
use axum::http::header::CONTENT_TYPE;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fedplane_core::error::Error;
use fedplane_core::platform::{Command, Outcome};
use fedplane_core::provenance::{model_node_id, FragmentSource, GraphFormat, ProvQuery};
use fedplane_core::quality::{PipelineRun, SourceBundle};
use fedplane_core::types::{FragmentId, ModuleId, RunId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{created, visible_record, Body, PathParam, QueryParam};
use crate::auth::Auth;
use crate::error::ApiResult;
use crate::{blocking, AppState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRequest {
    pub module: ModuleId,
    pub source_ref: String,
    #[serde(default)]
    pub release: bool,
    /// Overrides the configured source provider for this run.
    #[serde(default)]
    pub bundle: Option<SourceBundle>,
}

/// Runs every stage before responding; a failed stage is a successful
/// request whose run reports the failure.
pub async fn run_pipeline(
    State(state): State<AppState>,
    Auth(claims): Auth,
    Body(req): Body<RunRequest>,
) -> ApiResult<Response> {
    state.platform.read(|s| visible_record(s, &claims, &req.module).map(|_| ()))?;
    let platform = state.platform.clone();
    let run = blocking(move || platform.run_pipeline(&req.module, &req.source_ref, req.release, req.bundle)).await?;
    Ok(created(run))
}

pub async fn get_run(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(id): PathParam<RunId>,
) -> ApiResult<Json<PipelineRun>> {
    let run = state.platform.read(|s| {
        let run = s.pipeline_run(&id)?;
        visible_record(s, &claims, &run.module)
            .map(|_| run.clone())
            .map_err(|_| Error::NotFound(format!("pipeline run {id}")))
    })?;
    Ok(Json(run))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatParam {
    #[default]
    #[serde(alias = "canonical_json")]
    Json,
    Triples,
}

#[derive(Debug, Default, Deserialize)]
pub struct GraphQuery {
    #[serde(default)]
    pub format: FormatParam,
}

pub async fn graph(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(module): PathParam<ModuleId>,
    QueryParam(q): QueryParam<GraphQuery>,
) -> ApiResult<Response> {
    state.platform.read(|s| visible_record(s, &claims, &module).map(|_| ()))?;
    let (format, content_type) = match q.format {
        FormatParam::Json => (GraphFormat::CanonicalJson, "application/json"),
        FormatParam::Triples => (GraphFormat::Triples, "application/n-triples"),
    };
    let bytes = state.platform.provenance_bytes(&module, format)?;
    Ok(([(CONTENT_TYPE, content_type)], bytes).into_response())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    DatasetsUsed,
    ActivitiesOf,
    Lineage,
}

#[derive(Debug, Deserialize)]
pub struct QueryParams {
    pub pattern: Pattern,
    /// Node id; defaults to the module's model node.
    #[serde(default)]
    pub subject: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub pattern: Pattern,
    pub subject: String,
    pub results: BTreeSet<String>,
}

pub async fn query(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(module): PathParam<ModuleId>,
    QueryParam(q): QueryParam<QueryParams>,
) -> ApiResult<Json<QueryResult>> {
    state.platform.read(|s| visible_record(s, &claims, &module).map(|_| ()))?;
    let graph = state.platform.provenance_graph(&module)?;
    let subject = q.subject.unwrap_or_else(|| model_node_id(&module));
    let pq = match q.pattern {
        Pattern::DatasetsUsed => ProvQuery::DatasetsUsed(subject.clone()),
        Pattern::ActivitiesOf => ProvQuery::ActivitiesOf(subject.clone()),
        Pattern::Lineage => ProvQuery::Lineage(subject.clone()),
    };
    Ok(Json(QueryResult {
        pattern: q.pattern,
        subject,
        results: graph.query(&pq),
    }))
}

/// Only experiment-tracking fragments come from clients; the catalog,
/// pipeline and training fragments are emitted by the platform itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentRequest {
    pub source: FragmentSource,
    pub payload: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentCreated {
    pub id: FragmentId,
}

pub async fn ingest(
    State(state): State<AppState>,
    Auth(claims): Auth,
    PathParam(module): PathParam<ModuleId>,
    Body(req): Body<FragmentRequest>,
) -> ApiResult<Response> {
    if req.source != FragmentSource::Tracking {
        return Err(Error::Forbidden("only tracking fragments may be submitted".into()).into());
    }
    state.platform.read(|s| visible_record(s, &claims, &module).map(|_| ()))?;
    let Outcome::FragmentId(id) = state.platform.execute(Command::IngestFragment {
        module,
        source: req.source,
        payload: req.payload,
    })?
    else {
        unreachable!("ingest_fragment yields a fragment id")
    };
    Ok(created(FragmentCreated { id }))
}
