//! Signed bearer tokens carrying user, VO and access-tier claims.
//!
//! Wire form: `base64url(claims JSON) "." base64url(HMAC-SHA256(claims JSON))`,
//! unpadded. The MAC covers the exact encoded claim bytes.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::types::{Millis, Role, UserId, VoId};

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub user: UserId,
    pub vo: VoId,
    pub role: Role,
    /// Expiry, exclusive.
    pub exp: Millis,
    /// Platform operator: may manage the federation itself.
    #[serde(default)]
    pub admin: bool,
}

#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

impl TokenSigner {
    pub fn new(key: impl AsRef<[u8]>) -> Result<Self> {
        let key = key.as_ref();
        if key.is_empty() {
            return Err(Error::validation("token signing key must not be empty"));
        }
        Ok(Self { key: key.to_vec() })
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }

    pub fn mint(&self, claims: &Claims) -> String {
        let body = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        format!("{body}.{sig}")
    }

    pub fn verify(&self, token: &str, now: Millis) -> Result<Claims> {
        let bad = |why: &str| Error::Unauthenticated(why.to_string());
        let (body, sig) = token.split_once('.').ok_or_else(|| bad("malformed token"))?;
        let sig = URL_SAFE_NO_PAD
            .decode(sig)
            .map_err(|_| bad("malformed token signature"))?;
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        mac.verify_slice(&sig).map_err(|_| bad("bad token signature"))?;
        let raw = URL_SAFE_NO_PAD
            .decode(body)
            .map_err(|_| bad("malformed token body"))?;
        let claims: Claims =
            serde_json::from_slice(&raw).map_err(|_| bad("malformed token claims"))?;
        if now >= claims.exp {
            return Err(bad("token expired"));
        }
        Ok(claims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claims() -> Claims {
        Claims {
            user: "alice".into(),
            vo: "vo".into(),
            role: Role::Demo,
            exp: 1_000,
            admin: false,
        }
    }

    #[test]
    fn mint_verify_round_trip() {
        let s = TokenSigner::new(b"k").unwrap();
        assert_eq!(s.verify(&s.mint(&claims()), 999).unwrap(), claims());
    }

    #[test]
    fn expiry_is_exclusive() {
        let s = TokenSigner::new(b"k").unwrap();
        assert!(matches!(s.verify(&s.mint(&claims()), 1_000), Err(Error::Unauthenticated(_))));
    }

    #[test]
    fn tampering_is_detected() {
        let s = TokenSigner::new(b"k").unwrap();
        let token = s.mint(&claims());
        let (_, sig) = token.split_once('.').unwrap();
        let forged_body = URL_SAFE_NO_PAD.encode(
            serde_json::to_vec(&Claims { role: Role::Full, ..claims() }).unwrap(),
        );
        assert!(s.verify(&format!("{forged_body}.{sig}"), 0).is_err());
        assert!(TokenSigner::new(b"other").unwrap().verify(&token, 0).is_err());
        assert!(s.verify("garbage", 0).is_err());
    }
}
