//! Exhaustive role by route authorization matrix.

mod common;

use common::{start, Harness, VO};
use fedplane_api::auth::{demo_allowed, DEMO_ROUTES};
use fedplane_api::{ErrorBody, PUBLIC_ROUTES, ROUTES};
use fedplane_core::auth::Claims;
use fedplane_core::platform::Clock;
use fedplane_core::types::Role;
use reqwest::Method;
use serde_json::json;

const GUARD: &str = "demo access tier may not use";

fn concrete(route: &str) -> String {
    let mut out = String::new();
    for seg in route.split('/').filter(|s| !s.is_empty()) {
        out.push('/');
        out.push_str(match seg {
            "{*path}" => "a/b",
            s if s.starts_with('{') => "x-000001",
            s => s,
        });
    }
    out
}

fn body_for(method: &str) -> Option<serde_json::Value> {
    matches!(method, "POST" | "PUT").then(|| json!({}))
}

struct Probe {
    status: u16,
    body: Option<ErrorBody>,
}

fn probe(h: &Harness, method: &str, route: &str, token: Option<&str>) -> Probe {
    let m = Method::from_bytes(method.as_bytes()).unwrap();
    let path = concrete(route);
    let resp = h.send(m, &path, token, body_for(method));
    let status = resp.status().as_u16();
    if status == 200 && route == "/events" {
        // An open stream; the status is all the matrix needs.
        return Probe { status, body: None };
    }
    let text = resp.text().unwrap();
    Probe {
        status,
        body: serde_json::from_str(&text).ok(),
    }
}

fn is_guard(p: &Probe) -> bool {
    p.status == 403 && p.body.as_ref().is_some_and(|b| b.error.message.contains(GUARD))
}

#[test]
fn route_table_is_fully_routed() {
    let h = start();
    let admin = h.admin();
    for (method, route) in ROUTES {
        if *route == "/events" {
            continue;
        }
        let p = probe(&h, method, route, Some(&admin));
        assert_ne!(p.status, 405, "{method} {route} not routed");
        if p.status == 404 {
            assert!(p.body.is_some(), "{method} {route} fell through the router");
        }
    }
}

#[test]
fn matrix() {
    let h = start();
    h.world();
    let demo = h.token("dora", Role::Demo, false);
    let full = h.token("alice", Role::Full, false);
    // Tier comes from the VO membership too: a full token for a demo member.
    let capped = h.token("dora", Role::Full, false);
    let admin = h.admin();
    let expired = h.signer.mint(&Claims {
        user: "alice".into(),
        vo: VO.into(),
        role: Role::Full,
        exp: h.clock.now_ms(),
        admin: false,
    });
    let forged = {
        let other = fedplane_core::auth::TokenSigner::new("other-key").unwrap();
        other.mint(&Claims {
            user: "alice".into(),
            vo: VO.into(),
            role: Role::Full,
            exp: h.clock.now_ms() + 10_000,
            admin: true,
        })
    };
    let mut checked = 0;
    for (method, route) in ROUTES {
        let public = PUBLIC_ROUTES.contains(&(*method, *route));
        let admin_route = route.starts_with("/admin/");
        let m = Method::from_bytes(method.as_bytes()).unwrap();
        for token in [None, Some(expired.as_str()), Some(forged.as_str()), Some("garbage")] {
            let p = probe(&h, method, route, token);
            if public {
                assert_ne!(p.status, 401, "{method} {route} is public");
            } else {
                assert_eq!(p.status, 401, "{method} {route} with {token:?}");
                assert_eq!(p.body.unwrap().error.kind, "unauthenticated");
            }
        }
        for token in [&demo, &capped] {
            let p = probe(&h, method, route, Some(token));
            if public {
                assert!(p.status < 400, "{method} {route}");
            } else if demo_allowed(&m, route) {
                assert!(!is_guard(&p), "{method} {route} must be open to demo");
            } else {
                assert!(is_guard(&p), "{method} {route} must be closed to demo, got {}", p.status);
            }
        }
        let p = probe(&h, method, route, Some(&full));
        assert!(!is_guard(&p) && p.status != 401, "{method} {route} full: {}", p.status);
        if admin_route {
            assert_eq!(p.status, 403, "{method} {route} needs an operator token");
        }
        let p = probe(&h, method, route, Some(&admin));
        assert!(p.status != 401 && p.status != 403, "{method} {route} admin: {}", p.status);
        checked += 1;
    }
    assert_eq!(checked, ROUTES.len());
    for (m, r) in DEMO_ROUTES {
        assert!(ROUTES.contains(&(m, r)), "{m} {r} is not a route");
    }
}

#[test]
fn demo_semantics_on_allowed_routes() {
    let h = start();
    let w = h.world();
    let demo = h.token("dora", Role::Demo, false);
    let full = h.token("alice", Role::Full, false);
    let res = json!({"gpus": 0, "cpu_ghz": 2, "disk_gb": 10});
    for kind in ["standard", "batch"] {
        let body = h.call(
            Method::POST,
            "/deployments",
            &demo,
            Some(json!({"kind": kind, "module": w.module, "resources": res})),
            403,
        );
        assert!(body["error"]["message"].as_str().unwrap().contains("demo access tier"), "{body}");
    }
    let job = h.call(
        Method::POST,
        "/deployments",
        &demo,
        Some(json!({"kind": "tryme", "module": w.module, "resources": res})),
        201,
    );
    assert_eq!(job["spec"]["owner"], "dora");
    assert_eq!(job["spec"]["kind"], "tryme");
    let listed = h.call(Method::GET, "/catalog", &demo, None, 200);
    assert_eq!(listed.as_array().unwrap().len(), 1);

    // Endpoints need a built image.
    let run = h.call(
        Method::POST,
        "/pipeline-runs",
        &full,
        Some(json!({"module": w.module, "source_ref": "main"})),
        201,
    );
    assert!(run["build_digest"].is_string(), "{run}");
    let private = h.call(
        Method::POST,
        "/inference/endpoints",
        &full,
        Some(json!({"module": w.module, "max_replicas": 2, "per_replica_concurrency": 1})),
        201,
    );
    let public = h.call(
        Method::POST,
        "/inference/endpoints",
        &full,
        Some(json!({"module": w.module, "max_replicas": 2, "per_replica_concurrency": 1, "public_tryme": true})),
        201,
    );
    let body = h.call(
        Method::POST,
        &format!("/inference/endpoints/{}/invoke", private["id"].as_str().unwrap()),
        &demo,
        Some(json!({"x": 1})),
        403,
    );
    assert!(body["error"]["message"].as_str().unwrap().contains("try-me"));
    let out = h.call(
        Method::POST,
        &format!("/inference/endpoints/{}/invoke", public["id"].as_str().unwrap()),
        &demo,
        Some(json!({"x": 1})),
        200,
    );
    assert_eq!(out["endpoint"], public["id"]);
}

#[test]
fn role_claim_round_trips_through_a_request() {
    let h = start();
    h.world();
    for (user, role, effective) in [
        ("alice", Role::Full, "full"),
        ("dora", Role::Demo, "demo"),
        ("dora", Role::Full, "demo"),
    ] {
        let t = h.token(user, role, false);
        let s = h.call(Method::GET, "/session", &t, None, 200);
        assert_eq!(s["user"], user);
        assert_eq!(s["role"], serde_json::to_value(role).unwrap());
        assert_eq!(s["effective_role"], effective);
        assert_eq!(s["vo"], VO);
    }
}
