#![allow(dead_code)]

use std::sync::Arc;

use fedplane_api::{spawn, AppOptions, AppState, BackgroundServer};
use fedplane_core::auth::{Claims, TokenSigner};
use fedplane_core::platform::{Clock, ManualClock, Platform, Plugins};
use fedplane_core::types::Role;
use reqwest::blocking::{Client, Response};
use reqwest::Method;
use serde_json::{json, Value};

pub const VO: &str = "vo-ai";
pub const HMAC_KEY: &str = "test-hmac-key";
pub const TTL_MS: u64 = 3_600_000;

pub struct Harness {
    pub server: BackgroundServer,
    pub clock: Arc<ManualClock>,
    pub signer: TokenSigner,
    pub client: Client,
}

pub fn start() -> Harness {
    start_with(Arc::new(ManualClock::new(1_000)), |clock| Platform::in_memory(Plugins::default(), clock))
}

pub fn start_with(clock: Arc<ManualClock>, make: impl FnOnce(Arc<ManualClock>) -> Platform) -> Harness {
    let platform = Arc::new(make(clock.clone()));
    let signer = TokenSigner::new(HMAC_KEY).unwrap();
    let state = AppState::new(platform, signer.clone(), AppOptions::default());
    let server = spawn(state, "127.0.0.1:0".parse().unwrap()).unwrap();
    Harness {
        server,
        clock,
        signer,
        client: Client::builder().timeout(std::time::Duration::from_secs(10)).build().unwrap(),
    }
}

impl Harness {
    pub fn token(&self, user: &str, role: Role, admin: bool) -> String {
        self.signer.mint(&Claims {
            user: user.into(),
            vo: VO.into(),
            role,
            exp: self.clock.now_ms() + TTL_MS,
            admin,
        })
    }

    pub fn admin(&self) -> String {
        self.token("root", Role::Full, true)
    }

    pub fn send(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Response {
        let mut req = self.client.request(method, format!("{}{path}", self.server.url()));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        req.send().unwrap()
    }

    /// Sends and asserts the status; returns the JSON body (null if empty).
    pub fn call(&self, method: Method, path: &str, token: &str, body: Option<Value>, status: u16) -> Value {
        let resp = self.send(method.clone(), path, Some(token), body);
        let got = resp.status().as_u16();
        let text = resp.text().unwrap();
        assert_eq!(got, status, "{method} {path}: {text}");
        if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        }
    }

    /// VO with members alice/bob (full) and dora (demo), one provider with
    /// an SLA covering its capacity, and one catalog module.
    pub fn world(&self) -> World {
        let admin = self.admin();
        self.call(
            Method::POST,
            "/admin/vos",
            &admin,
            Some(json!({"id": VO, "member_roles": {"alice": "full", "bob": "full", "dora": "demo"}})),
            201,
        );
        let provider = self.call(
            Method::POST,
            "/admin/providers",
            &admin,
            Some(json!({"name": "dc1", "country": "ES", "endpoint": "https://dc1.example",
                        "capacity": {"gpus": 8, "cpu_ghz": 400, "disk_gb": 4000}, "supported_vos": [VO]})),
            201,
        );
        let pid = provider["id"].as_str().unwrap().to_string();
        self.call(
            Method::POST,
            "/admin/slas",
            &admin,
            Some(json!({"vo": VO, "provider": pid, "caps": {"gpus": 8, "cpu_ghz": 400, "disk_gb": 4000},
                        "valid_from": 0, "valid_until": u64::MAX / 2})),
            201,
        );
        let record = self.call(
            Method::POST,
            "/catalog",
            &admin,
            Some(json!({"metadata": metadata("Flowers")})),
            201,
        );
        World {
            provider: pid,
            module: record["id"].as_str().unwrap().to_string(),
        }
    }
}

pub struct World {
    pub provider: String,
    pub module: String,
}

pub fn metadata(title: &str) -> Value {
    json!({
        "title": title,
        "summary": format!("{title} classifier"),
        "license": "MIT",
        "authors": [{"name": "Ada Lovelace"}],
        "links": {"source_repo": "https://git.example/flowers", "dataset": "https://doi.org/10.5281/zenodo.42"},
        "tags": {"libraries": ["pytorch"], "categories": ["vision"]}
    })
}
