//! HTTP/JSON facade over the platform: bearer-token authentication, tier
//! guarded routes, a server-sent event stream of log entries and an
//! optional static asset directory for the dashboard.
//!
//! Handlers never mutate state themselves; every mutation is one platform
//! operation, which funnels through the serialized command applier.

pub mod auth;
pub mod config;
pub mod error;
mod routes;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post, put};
use axum::Router;
use fedplane_core::auth::TokenSigner;
use fedplane_core::error::{Error, Result};
use fedplane_core::platform::{LogEntry, Platform};
use tokio::sync::{broadcast, oneshot};

pub use config::ServerConfig;

/// Request and reply bodies defined by the API layer; all other bodies are
/// core types.
pub mod schema {
    pub use crate::routes::admin::{HeartbeatReply, HeartbeatRequest, MemberRequest, MintRequest, MintedToken, VoRequest};
    pub use crate::routes::catalog::{MetadataRequest, RegisterRequest};
    pub use crate::routes::deployments::{CompleteRequest, SubmitRequest};
    pub use crate::routes::inference::AsyncRequest;
    pub use crate::routes::misc::{ConfigInfo, SessionInfo};
    pub use crate::routes::provenance::{FragmentCreated, FragmentRequest, Pattern, QueryResult, RunRequest};
    pub use crate::routes::secrets::{PutSecretRequest, SecretValue};
}
pub use error::{ApiError, ApiResult, ErrorBody};

/// Capacity of the live event channel; a subscriber that falls further
/// behind is disconnected and resumes from its last seen seq.
pub const EVENT_CHANNEL_CAPACITY: usize = 4096;

/// Headroom over the platform payload limit, so oversized inference
/// payloads reach the platform's own check.
const BODY_LIMIT_HEADROOM: usize = 64 * 1024;

#[derive(Clone, Debug, Default)]
pub struct AppOptions {
    /// Served at `/` when present.
    pub static_dir: Option<PathBuf>,
    /// Reported by `/config`; defaults to the listen address.
    pub public_url: Option<String>,
    /// Background tick period; `None` leaves ticking to `/admin/tick`.
    pub tick_interval: Option<Duration>,
}

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub signer: TokenSigner,
    pub events: broadcast::Sender<Arc<LogEntry>>,
    pub options: AppOptions,
}

impl AppState {
    /// Connects the platform's log listener to the live event channel.
    pub fn new(platform: Arc<Platform>, signer: TokenSigner, options: AppOptions) -> Self {
        let (events, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        let tx = events.clone();
        platform.set_listener(Box::new(move |entries| {
            for e in entries {
                let _ = tx.send(Arc::new(e.clone()));
            }
        }));
        Self {
            platform,
            signer,
            events,
            options,
        }
    }
}

/// Every API route as (method, pattern). The router is built from the same
/// handlers; the authorization matrix test walks this table.
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/config"),
    ("GET", "/session"),
    ("GET", "/catalog"),
    ("POST", "/catalog"),
    ("GET", "/catalog/schema"),
    ("GET", "/catalog/{id}"),
    ("PUT", "/catalog/{id}"),
    ("POST", "/catalog/{id}/validate"),
    ("GET", "/catalog/{id}/export"),
    ("GET", "/providers"),
    ("POST", "/deployments"),
    ("GET", "/deployments"),
    ("GET", "/deployments/{id}"),
    ("DELETE", "/deployments/{id}"),
    ("POST", "/deployments/{id}/complete"),
    ("POST", "/deployments/{id}/snapshot"),
    ("GET", "/snapshots"),
    ("POST", "/snapshots/{id}/restore"),
    ("GET", "/secrets"),
    ("PUT", "/secrets/{*path}"),
    ("GET", "/secrets/{*path}"),
    ("DELETE", "/secrets/{*path}"),
    ("POST", "/inference/endpoints"),
    ("GET", "/inference/endpoints"),
    ("GET", "/inference/endpoints/{id}"),
    ("POST", "/inference/endpoints/{id}/invoke"),
    ("POST", "/inference/async"),
    ("GET", "/inference/async/{id}"),
    ("POST", "/inference/pipelines"),
    ("GET", "/inference/pipelines/{id}"),
    ("POST", "/inference/pipelines/{id}/invoke"),
    ("POST", "/pipeline-runs"),
    ("GET", "/pipeline-runs/{id}"),
    ("GET", "/provenance/{module}/graph"),
    ("GET", "/provenance/{module}/query"),
    ("POST", "/provenance/{module}/fragments"),
    ("GET", "/stats"),
    ("GET", "/events"),
    ("POST", "/admin/tokens"),
    ("POST", "/admin/providers"),
    ("POST", "/admin/providers/{id}/heartbeat"),
    ("POST", "/admin/vos"),
    ("PUT", "/admin/vos/{vo}/members/{user}"),
    ("POST", "/admin/slas"),
    ("POST", "/admin/tick"),
    ("POST", "/admin/snapshot"),
];

/// Routes reachable without a token.
pub const PUBLIC_ROUTES: [(&str, &str); 1] = [("GET", "/config")];

pub fn router(state: AppState) -> Router {
    use routes::{admin, catalog, deployments, inference, misc, provenance, secrets};
    let limit = state.platform.config().payload_limit + BODY_LIMIT_HEADROOM;
    let api = Router::new()
        .route("/config", get(misc::config))
        .route("/session", get(misc::session))
        .route("/stats", get(misc::stats))
        .route("/events", get(misc::events))
        .route("/providers", get(misc::providers))
        .route("/catalog", get(catalog::list).post(catalog::register))
        .route("/catalog/schema", get(catalog::schema))
        .route("/catalog/{id}", get(catalog::get_one).put(catalog::update))
        .route("/catalog/{id}/validate", post(catalog::validate))
        .route("/catalog/{id}/export", get(catalog::export))
        .route("/deployments", post(deployments::submit).get(deployments::list))
        .route("/deployments/{id}", get(deployments::get_one).delete(deployments::stop))
        .route("/deployments/{id}/complete", post(deployments::complete))
        .route("/deployments/{id}/snapshot", post(deployments::snapshot))
        .route("/snapshots", get(deployments::snapshots))
        .route("/snapshots/{id}/restore", post(deployments::restore))
        .route("/secrets", get(secrets::list))
        .route(
            "/secrets/{*path}",
            put(secrets::put).get(secrets::get_one).delete(secrets::delete),
        )
        .route("/inference/endpoints", post(inference::create).get(inference::list))
        .route("/inference/endpoints/{id}", get(inference::get_one))
        .route("/inference/endpoints/{id}/invoke", post(inference::invoke))
        .route("/inference/async", post(inference::submit_async))
        .route("/inference/async/{id}", get(inference::async_status))
        .route("/inference/pipelines", post(inference::compose))
        .route("/inference/pipelines/{id}", get(inference::get_dag))
        .route("/inference/pipelines/{id}/invoke", post(inference::invoke_dag))
        .route("/pipeline-runs", post(provenance::run_pipeline))
        .route("/pipeline-runs/{id}", get(provenance::get_run))
        .route("/provenance/{module}/graph", get(provenance::graph))
        .route("/provenance/{module}/query", get(provenance::query))
        .route("/provenance/{module}/fragments", post(provenance::ingest))
        .route("/admin/tokens", post(admin::mint))
        .route("/admin/providers", post(admin::register_provider))
        .route("/admin/providers/{id}/heartbeat", post(admin::heartbeat))
        .route("/admin/vos", post(admin::register_vo))
        .route("/admin/vos/{vo}/members/{user}", put(admin::set_member))
        .route("/admin/slas", post(admin::upsert_sla))
        .route("/admin/tick", post(admin::tick))
        .route("/admin/snapshot", post(admin::snapshot));
    let api = match &state.options.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    api.layer(DefaultBodyLimit::max(limit)).with_state(state)
}

/// Runs platform work off the async executor.
pub(crate) async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Storage(format!("worker task failed: {e}")))?
        .map_err(ApiError::from)
}

fn spawn_ticker(platform: Arc<Platform>, every: Duration) {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(every);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            interval.tick().await;
            let p = platform.clone();
            match tokio::task::spawn_blocking(move || p.tick()).await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::warn!("tick failed: {e}"),
                Err(e) => tracing::warn!("tick task failed: {e}"),
            }
        }
    });
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Some(every) = state.options.tick_interval {
        spawn_ticker(state.platform.clone(), every);
    }
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub platform: Arc<Platform>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and waits for in-flight ones.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a new thread.
pub fn spawn(state: AppState, addr: SocketAddr) -> std::io::Result<BackgroundServer> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let platform = state.platform.clone();
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, state, async {
            let _ = rx.await;
        }))
    });
    Ok(BackgroundServer {
        addr,
        platform,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
