//! HTTP transport, error classification and the token file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::{Method, Url};
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_API: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit 2.
    Usage(String),
    /// The API answered with an error status: exit 1.
    Api { status: u16, kind: String, message: String },
    /// The API could not be reached or answered garbage: exit 1.
    Transport(String),
    /// A local problem such as an unreadable file: exit 1.
    Local(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_API,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Api { status, message, .. } => write!(f, "{message} (HTTP {status})"),
            CliError::Transport(m) | CliError::Local(m) => f.write_str(m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub struct Api {
    base: Url,
    token: Option<String>,
    http: Client,
}

impl Api {
    pub fn new(base: &str, token: Option<String>) -> CliResult<Self> {
        let base = Url::parse(base).map_err(|e| CliError::Usage(format!("invalid API URL `{base}`: {e}")))?;
        if base.cannot_be_a_base() {
            return Err(CliError::Usage(format!("invalid API URL `{base}`")));
        }
        let http = Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| CliError::Local(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { base, token, http })
    }

    pub fn base(&self) -> &str {
        self.base.as_str().trim_end_matches('/')
    }

    /// The URL of a route; each segment is percent-encoded on its own.
    pub fn url<S: AsRef<str>>(&self, segments: &[S]) -> Url {
        let mut url = self.base.clone();
        {
            let mut path = url.path_segments_mut().expect("base checked in new");
            path.pop_if_empty();
            for s in segments {
                path.push(s.as_ref());
            }
        }
        url
    }

    /// Like [`Api::url`] with query pairs; `None` values are omitted.
    pub fn url_with<S: AsRef<str>>(&self, segments: &[S], query: &[(&str, Option<String>)]) -> Url {
        let mut url = self.url(segments);
        if query.iter().any(|(_, v)| v.is_some()) {
            let mut pairs = url.query_pairs_mut();
            for (k, v) in query {
                if let Some(v) = v {
                    pairs.append_pair(k, v);
                }
            }
        }
        url
    }

    /// Sends an optional JSON body and returns the raw successful response.
    pub fn send(&self, method: Method, url: Url, body: Option<&Value>) -> CliResult<Response> {
        let mut req = self.http.request(method, url);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req
            .send()
            .map_err(|e| CliError::Transport(format!("cannot reach API at {}: {e}", self.base())))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        let parsed: Option<Value> = serde_json::from_str(&text).ok();
        let detail = parsed.as_ref().and_then(|v| v.get("error"));
        let kind = detail
            .and_then(|d| d.get("kind"))
            .and_then(Value::as_str)
            .unwrap_or("http")
            .to_string();
        let message = detail
            .and_then(|d| d.get("message"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| if text.is_empty() { format!("HTTP {status}") } else { text });
        Err(CliError::Api { status, kind, message })
    }

    /// Sends and decodes a JSON reply; an empty reply decodes as null.
    pub fn json(&self, method: Method, url: Url, body: Option<&Value>) -> CliResult<Value> {
        let text = self.text(method, url, body)?;
        if text.is_empty() {
            return Ok(Value::Null);
        }
        serde_json::from_str(&text).map_err(|e| CliError::Transport(format!("API returned invalid JSON: {e}")))
    }

    pub fn text(&self, method: Method, url: Url, body: Option<&Value>) -> CliResult<String> {
        self.send(method, url, body)?
            .text()
            .map_err(|e| CliError::Transport(format!("reading response: {e}")))
    }
}

/// `$XDG_CONFIG_HOME/fedplane/token`, else `$HOME/.config/fedplane/token`.
pub fn default_token_path() -> Option<PathBuf> {
    let base = std::env::var_os("XDG_CONFIG_HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".config")))?;
    Some(base.join("fedplane").join("token"))
}

/// Writes the token readable by the owner only.
pub fn write_token(path: &Path, token: &str) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::Local(format!("cannot write token file {}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fail)?;
    }
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path).map_err(fail)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        f.set_permissions(fs::Permissions::from_mode(0o600)).map_err(fail)?;
    }
    f.write_all(token.as_bytes()).map_err(fail)?;
    f.write_all(b"\n").map_err(fail)
}

/// Refuses files that group or others can access.
pub fn read_token(path: &Path) -> CliResult<Option<String>> {
    let meta = match fs::metadata(path) {
        Ok(m) => m,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::Local(format!("cannot read token file {}: {e}", path.display()))),
    };
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = meta.permissions().mode() & 0o777;
        if mode & 0o077 != 0 {
            return Err(CliError::Local(format!(
                "token file {} has mode {mode:03o}; restrict it with `chmod 600`",
                path.display()
            )));
        }
    }
    #[cfg(not(unix))]
    let _ = meta;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Local(format!("cannot read token file {}: {e}", path.display())))?;
    let token = text.trim();
    Ok((!token.is_empty()).then(|| token.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_file_is_owner_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("token");
        write_token(&path, "abc.def").unwrap();
        assert_eq!(read_token(&path).unwrap().as_deref(), Some("abc.def"));
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(fs::metadata(&path).unwrap().permissions().mode() & 0o777, 0o600);
            fs::set_permissions(&path, fs::Permissions::from_mode(0o644)).unwrap();
            assert!(read_token(&path).is_err());
        }
    }

    #[test]
    fn rewriting_tightens_a_loose_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("token");
        fs::write(&path, "old").unwrap();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&path, fs::Permissions::from_mode(0o666)).unwrap();
        }
        write_token(&path, "new").unwrap();
        assert_eq!(read_token(&path).unwrap().as_deref(), Some("new"));
    }

    #[test]
    fn missing_file_means_no_token() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_token(&dir.path().join("absent")).unwrap(), None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Transport("x".into()).exit_code(), EXIT_API);
        let api = CliError::Api { status: 403, kind: "forbidden".into(), message: "no".into() };
        assert_eq!(api.exit_code(), EXIT_API);
    }

    #[test]
    fn segments_are_encoded_one_by_one() {
        let api = Api::new("http://h:1/base/", None).unwrap();
        assert_eq!(api.url(&["secrets", "a b/c"]).as_str(), "http://h:1/base/secrets/a%20b%2Fc");
        let q = api.url_with(&["catalog"], &[("tags", Some("x,y".into())), ("text", None)]);
        assert_eq!(q.as_str(), "http://h:1/base/catalog?tags=x%2Cy");
        assert!(matches!(Api::new("not a url", None), Err(CliError::Usage(_))));
    }
}
