//! Operator routes: token minting, providers, VOs, SLAs and manual ticks.

use std::collections::{BTreeMap, BTreeSet};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::Response;
use axum::Json;
use fedplane_core::auth::Claims;
use fedplane_core::catalog::TagPredicate;
use fedplane_core::error::{Error, Result};
use fedplane_core::federation::{Provider, ProviderSpec, ProviderStatus, Sla, SlaSpec, VirtualOrganization};
use fedplane_core::platform::{Command, Outcome, TickResult};
use fedplane_core::types::{Capacity, Millis, ProviderId, Role};
use serde::{Deserialize, Serialize};

use super::{created, Body, PathParam};
use crate::auth::Admin;
use crate::error::ApiResult;
use crate::{blocking, AppState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintRequest {
    pub user: String,
    pub vo: String,
    pub role: Role,
    pub ttl_ms: Millis,
    #[serde(default)]
    pub admin: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintedToken {
    pub token: String,
    pub claims: Claims,
}

pub async fn mint(State(state): State<AppState>, _admin: Admin, Body(req): Body<MintRequest>) -> ApiResult<Response> {
    if req.ttl_ms == 0 {
        return Err(Error::Validation("ttl_ms must be positive".into()).into());
    }
    let claims = Claims {
        user: req.user,
        vo: req.vo,
        role: req.role,
        exp: state.platform.now().saturating_add(req.ttl_ms),
        admin: req.admin,
    };
    Ok(created(MintedToken {
        token: state.signer.mint(&claims),
        claims,
    }))
}

pub async fn register_provider(
    State(state): State<AppState>,
    _admin: Admin,
    Body(spec): Body<ProviderSpec>,
) -> ApiResult<Response> {
    let Outcome::ProviderId(id) = state.platform.execute(Command::RegisterProvider { spec })? else {
        unreachable!("register_provider yields a provider id")
    };
    let provider: Provider = state.platform.read(|s| s.federation.provider(&id).cloned())?;
    Ok(created(provider))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    /// Self-reported free capacity; defaults to the full capacity.
    #[serde(default)]
    pub free: Option<Capacity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatReply {
    pub provider: ProviderId,
    pub status: ProviderStatus,
}

pub async fn heartbeat(
    State(state): State<AppState>,
    _admin: Admin,
    PathParam(id): PathParam<ProviderId>,
    Body(req): Body<HeartbeatRequest>,
) -> ApiResult<Json<HeartbeatReply>> {
    let free = match req.free {
        Some(f) => f,
        None => state.platform.read(|s| s.federation.provider(&id).map(|p| p.capacity))?,
    };
    let Outcome::ProviderStatus(status) = state.platform.execute(Command::Heartbeat {
        provider: id.clone(),
        free,
    })?
    else {
        unreachable!("heartbeat yields a status")
    };
    Ok(Json(HeartbeatReply { provider: id, status }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoRequest {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_quota_gb")]
    pub default_user_storage_quota_gb: u64,
    #[serde(default)]
    pub catalog_filter: Option<TagPredicate>,
    #[serde(default)]
    pub member_roles: BTreeMap<String, Role>,
    #[serde(default)]
    pub admins: BTreeSet<String>,
    #[serde(default)]
    pub tryme_allow_gpus: bool,
}

pub const DEFAULT_USER_STORAGE_QUOTA_GB: u64 = 10;

fn default_quota_gb() -> u64 {
    DEFAULT_USER_STORAGE_QUOTA_GB
}

fn vo_of(state: &AppState, id: &str) -> Result<VirtualOrganization> {
    state.platform.read(|s| s.federation.vo(id).cloned())
}

pub async fn register_vo(State(state): State<AppState>, _admin: Admin, Body(req): Body<VoRequest>) -> ApiResult<Response> {
    let vo = VirtualOrganization {
        name: req.name.unwrap_or_else(|| req.id.clone()),
        id: req.id,
        default_user_storage_quota_gb: req.default_user_storage_quota_gb,
        catalog_filter: req.catalog_filter,
        member_roles: req.member_roles,
        admins: req.admins,
        tryme_allow_gpus: req.tryme_allow_gpus,
    };
    let id = vo.id.clone();
    state.platform.execute(Command::RegisterVo { vo })?;
    Ok(created(vo_of(&state, &id)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRequest {
    pub role: Role,
    #[serde(default)]
    pub admin: bool,
}

pub async fn set_member(
    State(state): State<AppState>,
    _admin: Admin,
    PathParam((vo, user)): PathParam<(String, String)>,
    Body(req): Body<MemberRequest>,
) -> ApiResult<Json<VirtualOrganization>> {
    state.platform.execute(Command::SetMember {
        vo: vo.clone(),
        user,
        role: req.role,
        admin: req.admin,
    })?;
    Ok(Json(vo_of(&state, &vo)?))
}

pub async fn upsert_sla(State(state): State<AppState>, _admin: Admin, Body(spec): Body<SlaSpec>) -> ApiResult<Response> {
    let Outcome::SlaId(id) = state.platform.execute(Command::UpsertSla { spec })? else {
        unreachable!("upsert_sla yields an sla id")
    };
    let sla: Sla = state
        .platform
        .read(|s| s.federation.slas().find(|x| x.id == id).cloned())
        .expect("upserted sla exists");
    Ok(created(sla))
}

pub async fn tick(State(state): State<AppState>, _admin: Admin) -> ApiResult<Json<TickResult>> {
    let platform = state.platform.clone();
    Ok(Json(blocking(move || platform.tick()).await?))
}

pub async fn snapshot(State(state): State<AppState>, _admin: Admin) -> ApiResult<StatusCode> {
    let platform = state.platform.clone();
    blocking(move || platform.write_snapshot()).await?;
    Ok(StatusCode::NO_CONTENT)
}
