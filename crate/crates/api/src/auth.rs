//! Request authentication and the access-tier route guard.
//!
//! Every authenticated route verifies the bearer token first (401 on a bad
//! signature, malformed token or expiry), then applies the tier guard: a
//! demo-tier caller may reach only the routes in [`DEMO_ROUTES`] (403
//! otherwise). Finer checks (try-me only, public endpoints only) stay with
//! the platform.

use axum::extract::{FromRequestParts, MatchedPath};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::http::Method;
use fedplane_core::auth::Claims;
use fedplane_core::error::Error;
use fedplane_core::types::Role;

use crate::error::ApiError;
use crate::AppState;

/// Routes a demo-tier caller may use, as (method, route pattern).
pub const DEMO_ROUTES: [(&str, &str); 4] = [
    ("GET", "/catalog"),
    ("GET", "/session"),
    ("POST", "/deployments"),
    ("POST", "/inference/endpoints/{id}/invoke"),
];

/// Routes that also accept the token as an `access_token` query parameter,
/// for clients that cannot set headers.
const QUERY_TOKEN_ROUTES: [&str; 1] = ["/events"];

pub fn demo_allowed(method: &Method, route: &str) -> bool {
    DEMO_ROUTES.iter().any(|(m, r)| method.as_str() == *m && route == *r)
}

/// The caller's tier: the token's role capped by the VO membership role.
pub fn effective_role(state: &AppState, claims: &Claims) -> Role {
    state.platform.read(|s| {
        let member = s
            .federation
            .vo(&claims.vo)
            .ok()
            .and_then(|vo| vo.member_roles.get(&claims.user).copied());
        member.map_or(claims.role, |m| claims.role.meet(m))
    })
}

fn token_from(parts: &Parts, route: &str) -> Result<String, Error> {
    if let Some(value) = parts.headers.get(AUTHORIZATION) {
        let value = value
            .to_str()
            .map_err(|_| Error::Unauthenticated("authorization header is not ASCII".into()))?;
        return value
            .strip_prefix("Bearer ")
            .map(|t| t.trim().to_string())
            .ok_or_else(|| Error::Unauthenticated("expected a bearer token".into()));
    }
    if QUERY_TOKEN_ROUTES.contains(&route) {
        let token = parts.uri.query().and_then(|q| {
            q.split('&')
                .filter_map(|kv| kv.split_once('='))
                .find(|(k, _)| *k == "access_token")
                .map(|(_, v)| v.to_string())
        });
        if let Some(t) = token {
            return Ok(t);
        }
    }
    Err(Error::Unauthenticated("missing bearer token".into()))
}

/// Verified claims of a caller that passed the tier guard.
#[derive(Clone, Debug)]
pub struct Auth(pub Claims);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let route = parts
            .extensions
            .get::<MatchedPath>()
            .map(|m| m.as_str().to_string())
            .unwrap_or_else(|| parts.uri.path().to_string());
        let token = token_from(parts, &route)?;
        let claims = state.signer.verify(&token, state.platform.now())?;
        if effective_role(state, &claims) == Role::Demo && !demo_allowed(&parts.method, &route) {
            return Err(Error::Forbidden(format!(
                "demo access tier may not use {} {route}",
                parts.method
            ))
            .into());
        }
        Ok(Auth(claims))
    }
}

/// A platform operator: verified claims with the admin flag.
#[derive(Clone, Debug)]
pub struct Admin(pub Claims);

impl FromRequestParts<AppState> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let Auth(claims) = Auth::from_request_parts(parts, state).await?;
        if !claims.admin {
            return Err(Error::Forbidden("operator token required".into()).into());
        }
        Ok(Admin(claims))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_table_is_exact() {
        assert!(demo_allowed(&Method::GET, "/catalog"));
        assert!(demo_allowed(&Method::POST, "/inference/endpoints/{id}/invoke"));
        assert!(!demo_allowed(&Method::POST, "/catalog"));
        assert!(!demo_allowed(&Method::GET, "/deployments"));
        assert!(!demo_allowed(&Method::GET, "/catalog/{id}"));
    }
}
