//! Server configuration from the environment.
//!
//! `LISTEN_ADDR` (default `127.0.0.1:8080`), `STATE_DIR` (default
//! `./fedplane-state`), `MASTER_KEY` (64 hex digits, required),
//! `API_HMAC_KEY` (required). Optional: `STATIC_DIR`, `PUBLIC_URL`,
//! `TICK_INTERVAL_MS` (default 1000, 0 disables), `FSYNC` (default on).

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use fedplane_core::auth::TokenSigner;
use fedplane_core::error::{Error, Result};
use fedplane_core::platform::{FileLog, Platform, PlatformConfig, Plugins, SystemClock};
use fedplane_core::secrets::MasterKey;

use crate::{AppOptions, AppState};

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_STATE_DIR: &str = "./fedplane-state";
pub const DEFAULT_TICK_INTERVAL_MS: u64 = 1000;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub listen_addr: SocketAddr,
    pub state_dir: PathBuf,
    pub master_key: MasterKey,
    pub hmac_key: String,
    pub static_dir: Option<PathBuf>,
    pub public_url: Option<String>,
    pub tick_interval: Option<Duration>,
    pub fsync: bool,
}

impl ServerConfig {
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let var = |k: &str| get(k).filter(|v| !v.is_empty());
        let required = |k: &str| var(k).ok_or_else(|| Error::Validation(format!("{k} must be set")));
        let listen_addr = var("LISTEN_ADDR")
            .unwrap_or_else(|| DEFAULT_LISTEN_ADDR.into())
            .parse()
            .map_err(|e| Error::Validation(format!("LISTEN_ADDR: {e}")))?;
        let master_key = MasterKey::from_hex(&required("MASTER_KEY")?)?;
        let tick_ms = match var("TICK_INTERVAL_MS") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|e| Error::Validation(format!("TICK_INTERVAL_MS: {e}")))?,
            None => DEFAULT_TICK_INTERVAL_MS,
        };
        let fsync = match var("FSYNC").as_deref() {
            None | Some("1" | "true" | "on") => true,
            Some("0" | "false" | "off") => false,
            Some(other) => return Err(Error::Validation(format!("FSYNC: unrecognized value `{other}`"))),
        };
        Ok(Self {
            listen_addr,
            state_dir: var("STATE_DIR").unwrap_or_else(|| DEFAULT_STATE_DIR.into()).into(),
            master_key,
            hmac_key: required("API_HMAC_KEY")?,
            static_dir: var("STATIC_DIR").map(PathBuf::from),
            public_url: var("PUBLIC_URL"),
            tick_interval: (tick_ms > 0).then(|| Duration::from_millis(tick_ms)),
            fsync,
        })
    }

    /// Recovers or creates the platform under `state_dir`.
    pub fn open(&self, plugins: Plugins) -> Result<AppState> {
        let log = FileLog::open(&self.state_dir, self.fsync)?;
        let platform = Platform::open(
            Box::new(log),
            PlatformConfig::default(),
            plugins,
            Arc::new(SystemClock),
            self.master_key.clone(),
        )?;
        let options = AppOptions {
            static_dir: self.static_dir.clone(),
            public_url: Some(self.public_url.clone().unwrap_or_else(|| format!("http://{}", self.listen_addr))),
            tick_interval: self.tick_interval,
        };
        Ok(AppState::new(Arc::new(platform), TokenSigner::new(&self.hmac_key)?, options))
    }
}
