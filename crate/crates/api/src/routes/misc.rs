//! Session, configuration, statistics, providers and the event stream.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::Json;
use fedplane_core::catalog::schema::SCHEMA_VERSION;
use fedplane_core::federation::Provider;
use fedplane_core::platform::{LogEntry, StatsSnapshot};
use fedplane_core::types::{Millis, Role};
use serde::{Deserialize, Serialize};
use tokio_stream::wrappers::errors::BroadcastStreamRecvError;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use super::QueryParam;
use crate::auth::{effective_role, Auth};
use crate::error::ApiResult;
use crate::AppState;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigInfo {
    pub api_url: String,
    pub platform_uri: String,
    pub version: String,
    pub schema_version: String,
}

/// `api_url` is the configured public URL, else the address the caller used.
pub async fn config(State(state): State<AppState>, headers: HeaderMap) -> Json<ConfigInfo> {
    let platform_uri = state.platform.read(|s| s.catalog.platform_uri().to_string());
    let api_url = state.options.public_url.clone().unwrap_or_else(|| {
        headers
            .get(axum::http::header::HOST)
            .and_then(|h| h.to_str().ok())
            .map(|h| format!("http://{h}"))
            .unwrap_or_default()
    });
    Json(ConfigInfo {
        api_url,
        platform_uri,
        version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub user: String,
    pub vo: String,
    /// Role carried by the token.
    pub role: Role,
    /// Role after capping by VO membership; what the tier guard applies.
    pub effective_role: Role,
    pub admin: bool,
    pub exp: Millis,
    /// Latest log seq, the starting cursor for `/events`.
    pub last_seq: u64,
}

pub async fn session(State(state): State<AppState>, Auth(claims): Auth) -> Json<SessionInfo> {
    Json(SessionInfo {
        effective_role: effective_role(&state, &claims),
        user: claims.user,
        vo: claims.vo,
        role: claims.role,
        admin: claims.admin,
        exp: claims.exp,
        last_seq: state.platform.last_seq(),
    })
}

pub async fn stats(State(state): State<AppState>, _auth: Auth) -> Json<StatsSnapshot> {
    Json(state.platform.stats())
}

pub async fn providers(State(state): State<AppState>, _auth: Auth) -> Json<Vec<Provider>> {
    Json(state.platform.read(|s| s.federation.providers().cloned().collect()))
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// Replay entries with `seq > since`.
    #[serde(default)]
    pub since: Option<u64>,
}

fn to_event(e: &LogEntry) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.kind.clone())
        .data(serde_json::to_string(e).expect("log entries serialize"))
}

/// Operators see the whole log; other callers see derived `event.*`
/// entries only, since commands carry other users' requests.
fn visible(admin: bool, e: &LogEntry) -> bool {
    admin || !e.is_command()
}

/// Replays the log after the cursor (`since`, or `Last-Event-ID`), then
/// follows live entries. Delivery is in seq order without duplicates; a
/// lagging consumer is disconnected and resumes by reconnecting.
pub async fn events(
    State(state): State<AppState>,
    Auth(claims): Auth,
    headers: HeaderMap,
    QueryParam(q): QueryParam<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let header_cursor = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    let since = header_cursor.or(q.since).unwrap_or(0);
    // Subscribe before reading the backlog so nothing falls in between.
    let live = BroadcastStream::new(state.events.subscribe());
    let backlog = state.platform.entries_since(since);
    let cursor = backlog.last().map_or(since, |e| e.seq);
    let admin = claims.admin;
    let replay = tokio_stream::iter(backlog.into_iter().map(Arc::new));
    let follow = live
        .take_while(|r| !matches!(r, Err(BroadcastStreamRecvError::Lagged(_))))
        .filter_map(Result::ok)
        .filter(move |e| e.seq > cursor);
    let stream = replay
        .chain(follow)
        .filter(move |e| visible(admin, e))
        .map(|e| Ok(to_event(&e)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
