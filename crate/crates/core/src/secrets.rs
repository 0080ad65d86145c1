//! Per-user, path-scoped secrets, encrypted at rest.
//!
//! Each entry is sealed with ChaCha20-Poly1305 under the master key, a fresh
//! random 96-bit nonce, and `owner \0 path` as associated data, so an entry
//! cannot be replayed under another owner or path. Sealing happens before a
//! put command is logged; only ciphertext ever reaches the log or snapshot.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{JobId, Millis, UserId};

pub const NONCE_LEN: usize = 12;

#[derive(Clone)]
pub struct MasterKey([u8; 32]);

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

impl MasterKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_hex(hex_str: &str) -> Result<Self> {
        let raw = hex::decode(hex_str.trim())
            .map_err(|e| Error::validation(format!("master key is not hex: {e}")))?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|v: Vec<u8>| Error::validation(format!("master key must be 32 bytes, got {}", v.len())))?;
        Ok(Self(bytes))
    }

    fn cipher(&self) -> ChaCha20Poly1305 {
        ChaCha20Poly1305::new(Key::from_slice(&self.0))
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sealed {
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "b64")]
    pub nonce: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretEntry {
    pub owner: UserId,
    pub path: String,
    #[serde(flatten)]
    pub sealed: Sealed,
    pub created_at: Millis,
}

fn aad(owner: &str, path: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(owner.len() + path.len() + 1);
    out.extend_from_slice(owner.as_bytes());
    out.push(0);
    out.extend_from_slice(path.as_bytes());
    out
}

pub fn validate_path(path: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::validation("secret path must not be empty"));
    }
    if let Some(bad) = path.split('/').find(|s| s.is_empty() || *s == ".." || *s == ".") {
        return Err(Error::validation(format!(
            "secret path `{path}` has an invalid segment `{bad}`"
        )));
    }
    Ok(())
}

pub fn seal(key: &MasterKey, owner: &str, path: &str, plaintext: &[u8], rng: &mut impl RngCore) -> Result<Sealed> {
    validate_path(path)?;
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ciphertext = key
        .cipher()
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &aad(owner, path),
            },
        )
        .map_err(|_| Error::Storage("encryption failed".into()))?;
    Ok(Sealed {
        ciphertext,
        nonce: nonce.to_vec(),
    })
}

pub fn open(key: &MasterKey, entry: &SecretEntry) -> Result<Vec<u8>> {
    if entry.sealed.nonce.len() != NONCE_LEN {
        return Err(Error::Decryption);
    }
    key.cipher()
        .decrypt(
            Nonce::from_slice(&entry.sealed.nonce),
            Payload {
                msg: &entry.sealed.ciphertext,
                aad: &aad(&entry.owner, &entry.path),
            },
        )
        .map_err(|_| Error::Decryption)
}

pub fn deployment_prefix(job: &JobId) -> String {
    format!("deployments/{job}/")
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretStore {
    entries: BTreeMap<UserId, BTreeMap<String, SecretEntry>>,
}

impl SecretStore {
    fn missing(path: &str) -> Error {
        Error::not_found(format!("secret `{path}`"))
    }

    pub fn put_sealed(&mut self, owner: &str, path: &str, sealed: Sealed, now: Millis) -> Result<()> {
        validate_path(path)?;
        if sealed.nonce.len() != NONCE_LEN {
            return Err(Error::validation("sealed secret has a malformed nonce"));
        }
        self.entries.entry(owner.to_string()).or_default().insert(
            path.to_string(),
            SecretEntry {
                owner: owner.to_string(),
                path: path.to_string(),
                sealed,
                created_at: now,
            },
        );
        Ok(())
    }

    pub fn entry(&self, owner: &str, path: &str) -> Result<&SecretEntry> {
        self.entries
            .get(owner)
            .and_then(|m| m.get(path))
            .ok_or_else(|| Self::missing(path))
    }

    pub fn get(&self, key: &MasterKey, owner: &str, path: &str) -> Result<Vec<u8>> {
        open(key, self.entry(owner, path)?)
    }

    /// Paths of `owner` starting with `prefix`, sorted.
    pub fn list(&self, owner: &str, prefix: &str) -> Vec<String> {
        self.entries
            .get(owner)
            .map(|m| {
                m.range(prefix.to_string()..)
                    .take_while(|(p, _)| p.starts_with(prefix))
                    .map(|(p, _)| p.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn delete(&mut self, owner: &str, path: &str) -> Result<()> {
        let user = self.entries.get_mut(owner).ok_or_else(|| Self::missing(path))?;
        user.remove(path).ok_or_else(|| Self::missing(path))?;
        if user.is_empty() {
            self.entries.remove(owner);
        }
        Ok(())
    }

    /// Removes every owner's entries under `deployments/<job>/`.
    pub fn cascade_delete_deployment(&mut self, job: &JobId) -> usize {
        let prefix = deployment_prefix(job);
        let mut removed = 0;
        for user in self.entries.values_mut() {
            let before = user.len();
            user.retain(|p, _| !p.starts_with(&prefix));
            removed += before - user.len();
        }
        self.entries.retain(|_, m| !m.is_empty());
        removed
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn key() -> MasterKey {
        MasterKey::from_bytes([7; 32])
    }

    fn put(store: &mut SecretStore, owner: &str, path: &str, value: &[u8]) {
        let mut rng = StdRng::seed_from_u64(1);
        let sealed = seal(&key(), owner, path, value, &mut rng).unwrap();
        store.put_sealed(owner, path, sealed, 0).unwrap();
    }

    #[test]
    fn round_trip_including_empty() {
        let mut s = SecretStore::default();
        put(&mut s, "a", "x", b"");
        put(&mut s, "a", "y/z", b"\x00\xffhello");
        assert_eq!(s.get(&key(), "a", "x").unwrap(), b"");
        assert_eq!(s.get(&key(), "a", "y/z").unwrap(), b"\x00\xffhello");
        assert_ne!(s.entry("a", "x").unwrap().sealed.ciphertext, b"");
    }

    #[test]
    fn cross_user_is_not_found() {
        let mut s = SecretStore::default();
        put(&mut s, "a", "token", b"v");
        assert!(matches!(s.get(&key(), "b", "token"), Err(Error::NotFound(_))));
        assert!(matches!(s.delete("b", "token"), Err(Error::NotFound(_))));
    }

    #[test]
    fn wrong_key_fails_decryption() {
        let mut s = SecretStore::default();
        put(&mut s, "a", "token", b"v");
        let other = MasterKey::from_bytes([8; 32]);
        assert_eq!(s.get(&other, "a", "token"), Err(Error::Decryption));
    }

    #[test]
    fn entry_bound_to_owner_and_path() {
        let mut s = SecretStore::default();
        put(&mut s, "a", "p", b"v");
        let moved = s.entry("a", "p").unwrap().sealed.clone();
        s.put_sealed("b", "p", moved, 0).unwrap();
        assert_eq!(s.get(&key(), "b", "p"), Err(Error::Decryption));
    }

    #[test]
    fn path_rules() {
        for bad in ["", "a//b", "../x", "a/../b", "/lead", "trail/"] {
            assert!(validate_path(bad).is_err(), "{bad}");
        }
        assert!(validate_path("deployments/job-000001/fl-token").is_ok());
    }

    #[test]
    fn list_and_cascade() {
        let mut s = SecretStore::default();
        put(&mut s, "a", "deployments/job-000001/t1", b"1");
        put(&mut s, "a", "deployments/job-000001/t2", b"2");
        put(&mut s, "b", "deployments/job-000001/x", b"3");
        put(&mut s, "a", "deployments/job-0000010/t", b"4");
        put(&mut s, "a", "other", b"5");
        assert_eq!(
            s.list("a", "deployments/job-000001/"),
            vec!["deployments/job-000001/t1", "deployments/job-000001/t2"]
        );
        assert_eq!(s.cascade_delete_deployment(&JobId::from("job-000001")), 3);
        assert_eq!(s.list("a", ""), vec!["deployments/job-0000010/t", "other"]);
        assert_eq!(s.cascade_delete_deployment(&JobId::from("job-999999")), 0);
    }

    #[test]
    fn master_key_hex() {
        assert!(MasterKey::from_hex(&"ab".repeat(32)).is_ok());
        assert!(MasterKey::from_hex("abcd").is_err());
        assert!(MasterKey::from_hex("zz").is_err());
    }
}
