//! Bucketed key/value blob store standing in for an object store.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

pub const INBOX: &str = "inbox";
pub const OUTBOX: &str = "outbox";

pub trait BlobStore: Send + Sync {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> Result<()>;
    fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>>;
}

fn check_name(part: &str) -> Result<()> {
    let ok = !part.is_empty()
        && part != "."
        && part != ".."
        && part
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!("invalid blob name `{part}`")))
    }
}

#[derive(Debug, Default)]
pub struct MemBlobStore {
    blobs: Mutex<BTreeMap<(String, String), Vec<u8>>>,
}

impl BlobStore for MemBlobStore {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> Result<()> {
        check_name(bucket)?;
        check_name(key)?;
        self.blobs
            .lock()
            .expect("blob lock")
            .insert((bucket.into(), key.into()), bytes.to_vec());
        Ok(())
    }

    fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>> {
        self.blobs
            .lock()
            .expect("blob lock")
            .get(&(bucket.to_string(), key.to_string()))
            .cloned()
            .ok_or_else(|| Error::not_found(format!("blob {bucket}/{key}")))
    }
}

/// Blobs at `<root>/<bucket>/<key>`, written via rename for atomicity.
#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }
}

impl BlobStore for FsBlobStore {
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> Result<()> {
        check_name(bucket)?;
        check_name(key)?;
        let dir = self.root.join(bucket);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(".{key}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join(key))?;
        Ok(())
    }

    fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>> {
        check_name(bucket)?;
        check_name(key)?;
        match fs::read(self.root.join(bucket).join(key)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::not_found(format!("blob {bucket}/{key}")))
            }
            Err(e) => Err(e.into()),
        }
    }
}
