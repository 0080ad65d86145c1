//! Exit codes, diagnostics, the token file and environment overrides.

mod common;

use std::process::Command;

use common::*;
use fedplane_core::platform::LogEntry;
use fedplane_core::types::Role;

const BIN: &str = env!("CARGO_BIN_EXE_fedplane");

#[test]
fn empty_catalog_lists_as_an_empty_array() {
    let env = start();
    let r = env.run(Some(&env.token("alice", Role::Full, false)), &["--json", "catalog", "list"]);
    assert_eq!((r.code, r.stdout.as_str()), (0, "[]\n"), "{}", r.stderr);
    let human = env.run(Some(&env.token("alice", Role::Full, false)), &["catalog", "list"]);
    assert_eq!((human.code, human.stdout.as_str()), (0, "(none)\n"));
}

#[test]
fn demo_tier_cannot_deploy_standard() {
    let env = start();
    env.world();
    let dora = env.token("dora", Role::Demo, false);
    let meta = env.write("m.json", &metadata("Flowers"));
    let module = env.json(&env.admin(), &["catalog", "register", "--metadata", &meta])["id"]
        .as_str()
        .unwrap()
        .to_string();
    for kind in ["standard", "batch"] {
        let r = env.run(Some(&dora), &["deploy", "--kind", kind, "--module", &module]);
        assert_eq!(r.code, 1, "{kind}");
        assert!(
            r.stderr.contains("demo access tier may only deploy short-lived try-me jobs"),
            "{kind}: {}",
            r.stderr
        );
        assert!(r.stdout.is_empty());
    }
    let ok = env.run(Some(&dora), &["deploy", "--kind", "tryme", "--module", &module]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    let guarded = env.run(Some(&dora), &["ps"]);
    assert_eq!(guarded.code, 1);
    assert!(guarded.stderr.contains("(HTTP 403)"), "{}", guarded.stderr);
}

#[test]
fn unreachable_api_exits_one_with_a_diagnostic() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let token_file = dir.path().join("token").display().to_string();
    let r = run_raw(
        &["fedplane", "--api-url", &url, "--token-file", &token_file, "--token", "t", "stats"].map(String::from),
        b"",
    );
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with(&format!("error: cannot reach API at {url}")), "{}", r.stderr);
    assert!(r.stdout.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let env = start();
    let t = env.admin();
    for args in [
        vec![],
        vec!["no-such-command"],
        vec!["deploy", "--module", "m"],
        vec!["deploy", "--kind", "huge", "--module", "m"],
        vec!["complete", "job-000001", "--metric", "novalue"],
        vec!["secret", "put", "p", "--value", "a", "--from-file", "f"],
        vec!["endpoint", "invoke", "e", "--payload", "{not json"],
        vec!["admin", "heartbeat", "p", "--gpus", "1"],
    ] {
        let r = env.run(Some(&t), &args);
        assert_eq!(r.code, 2, "{args:?}: {}", r.stderr);
        assert!(!r.stderr.is_empty());
    }
    let bad_url = run_raw(&["fedplane", "--api-url", "not a url", "stats"].map(String::from), b"");
    assert_eq!(bad_url.code, 2, "{}", bad_url.stderr);
    let help = env.run(None, &["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("Usage"));
}

#[test]
fn api_errors_exit_one() {
    let env = start();
    let missing = env.run(None, &["stats"]);
    assert_eq!(missing.code, 1);
    assert!(missing.stderr.contains("(HTTP 401)"), "{}", missing.stderr);
    let alice = env.token("alice", Role::Full, false);
    let r = env.run(Some(&alice), &["inspect", "job-999999"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("(HTTP 404)"), "{}", r.stderr);
    let r = env.run(Some(&alice), &["admin", "tick"]);
    assert!(r.code == 1 && r.stderr.contains("operator token required"), "{}", r.stderr);
}

#[test]
fn login_stores_an_owner_only_token() {
    let env = start();
    let alice = env.token("alice", Role::Full, false);
    let bad = env.run(None, &["login", "--with-token", "forged.token"]);
    assert_eq!(bad.code, 1);
    assert!(!env.token_file().exists(), "a rejected token is not stored");

    let r = run_raw(&env.argv(None, &["--json", "login"]), format!("{alice}\n").as_bytes());
    assert_eq!(r.code, 0, "{}", r.stderr);
    let session: fedplane_api::schema::SessionInfo = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!((session.user.as_str(), session.role), ("alice", Role::Full));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(env.token_file()).unwrap().permissions().mode() & 0o777;
        assert_eq!(mode, 0o600);
    }
    assert_eq!(env.run(None, &["stats"]).code, 0, "the stored token is used");

    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(env.token_file(), std::fs::Permissions::from_mode(0o644)).unwrap();
        let loose = env.run(None, &["stats"]);
        assert_eq!(loose.code, 1);
        assert!(loose.stderr.contains("chmod 600"), "{}", loose.stderr);
        assert_eq!(env.run(Some(&alice), &["stats"]).code, 0, "an explicit token bypasses the file");
    }

    let offline = env.run(None, &["login", "--offline", "--with-token", "anything"]);
    assert_eq!(offline.code, 0, "{}", offline.stderr);
    assert_eq!(std::fs::read_to_string(env.token_file()).unwrap().trim(), "anything");
}

#[test]
fn environment_overrides_url_and_token() {
    let env = start();
    let dir = tempfile::tempdir().unwrap();
    let run = |token: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["--json", "session"])
            .env("AI4_API_URL", env.server.url())
            .env("AI4_TOKEN_FILE", dir.path().join("token"))
            .env_remove("AI4_TOKEN")
            .env_remove("API_HMAC_KEY");
        if let Some(t) = token {
            cmd.env("AI4_TOKEN", t);
        }
        cmd.output().unwrap()
    };
    let out = run(Some(&env.token("alice", Role::Full, false)));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let session: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(session["user"], "alice");
    let out = run(None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn local_minting_signs_with_the_shared_key() {
    let env = start();
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["--json", "admin", "mint-token", "--user", "erin", "--vo", VO, "--role", "full", "--ttl-ms"])
        .arg((10 * TTL_MS).to_string())
        .env("API_HMAC_KEY", HMAC_KEY)
        .env("AI4_TOKEN_FILE", dir.path().join("token"))
        .env("AI4_API_URL", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let minted: fedplane_api::schema::MintedToken = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(minted.claims.user.as_str(), "erin");
    // The server clock sits near zero, so a wall-clock expiry is far ahead.
    let session = env.json(&minted.token, &["session"]);
    assert_eq!(session["user"], "erin");
}

#[test]
fn secret_get_prints_raw_bytes_and_events_stream_as_lines() {
    let env = start();
    let alice = env.token("alice", Role::Full, false);
    let file = env.path("blob.bin");
    std::fs::write(&file, [0u8, 159, 146, 150, 10]).unwrap();
    env.ok(&alice, &["secret", "put", "bin/blob", "--from-file", &file.display().to_string()]);
    let mut out = Vec::new();
    let argv = env.argv(Some(&alice), &["secret", "get", "bin/blob"]);
    let code = fedplane_cli::run(argv, &mut &b""[..], &mut out, &mut Vec::new());
    assert_eq!((code, out), (0, vec![0u8, 159, 146, 150, 10]));

    let admin = env.admin();
    let lines = env.ok(&admin, &["--json", "events", "--limit", "2"]);
    let entries: Vec<LogEntry> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 2);
    assert!(entries[0].seq < entries[1].seq);
    let human = env.ok(&admin, &["events", "--limit", "1"]);
    assert!(human.starts_with("1\tcommand\t{"), "{human}");
}

#[test]
fn human_output_lists_ids() {
    let env = start();
    env.world();
    let alice = env.token("alice", Role::Full, false);
    let meta = env.write("m.json", &metadata("Flowers"));
    let out = env.ok(&alice, &["catalog", "register", "--metadata", &meta]);
    assert!(out.lines().any(|l| l.starts_with("id: ")), "{out}");
    env.ok(&alice, &["deploy", "--kind", "tryme", "--module", "module-000001"]);
    let ps = env.ok(&alice, &["ps"]);
    assert!(ps.starts_with("job-000001  state=queued"), "{ps}");
}
