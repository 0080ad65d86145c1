#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use fedplane_api::{spawn, AppOptions, AppState, BackgroundServer};
use fedplane_core::auth::{Claims, TokenSigner};
use fedplane_core::platform::{Clock, ManualClock, Platform, Plugins};
use fedplane_core::types::Role;
use serde_json::{json, Value};

pub const VO: &str = "vo-ai";
pub const HMAC_KEY: &str = "cli-test-hmac-key";
pub const TTL_MS: u64 = 3_600_000;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// An in-process server on a fixed manual clock, so replies are reproducible.
pub struct Env {
    pub server: BackgroundServer,
    pub clock: Arc<ManualClock>,
    pub signer: TokenSigner,
    pub dir: tempfile::TempDir,
}

pub fn start() -> Env {
    let clock = Arc::new(ManualClock::new(1_000));
    let platform = Arc::new(Platform::in_memory(Plugins::default(), clock.clone()));
    let signer = TokenSigner::new(HMAC_KEY).unwrap();
    let state = AppState::new(platform, signer.clone(), AppOptions::default());
    Env {
        server: spawn(state, "127.0.0.1:0".parse().unwrap()).unwrap(),
        clock,
        signer,
        dir: tempfile::tempdir().unwrap(),
    }
}

/// Runs the client in process with the given stdin.
pub fn run_raw(argv: &[String], stdin: &[u8]) -> Run {
    let mut input = stdin;
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = fedplane_cli::run(argv.iter().cloned(), &mut input, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

impl Env {
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

    pub fn token_file(&self) -> PathBuf {
        self.dir.path().join("token")
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn argv(&self, token: Option<&str>, args: &[&str]) -> Vec<String> {
        let mut argv = vec![
            "fedplane".to_string(),
            "--api-url".into(),
            self.server.url(),
            "--token-file".into(),
            self.token_file().display().to_string(),
        ];
        if let Some(t) = token {
            argv.extend(["--token".to_string(), t.to_string()]);
        }
        argv.extend(args.iter().map(|s| s.to_string()));
        argv
    }

    pub fn run(&self, token: Option<&str>, args: &[&str]) -> Run {
        run_raw(&self.argv(token, args), b"")
    }

    pub fn ok(&self, token: &str, args: &[&str]) -> String {
        let r = self.run(Some(token), args);
        assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
        r.stdout
    }

    /// Runs with `--json` and parses stdout.
    pub fn json(&self, token: &str, args: &[&str]) -> Value {
        let mut with = vec!["--json"];
        with.extend_from_slice(args);
        let out = self.ok(token, &with);
        serde_json::from_str(&out).unwrap_or_else(|e| panic!("{args:?}: {e}: {out}"))
    }

    pub fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    /// VO with alice (full) and dora (demo); one provider with an SLA.
    /// Returns the provider id.
    pub fn world(&self) -> String {
        let admin = self.admin();
        self.ok(&admin, &["admin", "add-vo", VO]);
        self.ok(&admin, &["admin", "set-member", VO, "alice", "--role", "full"]);
        self.ok(&admin, &["admin", "set-member", VO, "dora", "--role", "demo"]);
        let p = self.json(
            &admin,
            &[
                "admin", "add-provider", "--name", "dc1", "--country", "ES", "--endpoint", "https://dc1.example",
                "--gpus", "8", "--cpu-ghz", "400", "--disk-gb", "4000", "--supported-vo", VO,
            ],
        );
        let pid = p["id"].as_str().unwrap().to_string();
        self.ok(
            &admin,
            &["admin", "sla", "--vo", VO, "--provider", &pid, "--gpus", "8", "--cpu-ghz", "400", "--disk-gb", "4000"],
        );
        pid
    }
}

pub fn metadata(title: &str) -> String {
    json!({
        "title": title,
        "summary": format!("{title} classifier"),
        "license": "MIT",
        "authors": [{"name": "Ada Lovelace"}],
        "links": {"source_repo": "https://git.example/flowers", "dataset": "https://doi.org/10.5281/zenodo.42"},
        "tags": {"libraries": ["pytorch"], "categories": ["vision"]}
    })
    .to_string()
}
