//! One function per subcommand: build the request from flags, call the API,
//! hand back the decoded reply.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clap::ValueEnum;
use fedplane_core::auth::{Claims, TokenSigner};
use fedplane_core::federation::parse_provider_fixture;
use fedplane_core::types::Role;
use reqwest::Method;
use serde_json::{json, Map, Value};

use crate::args::*;
use crate::client::{read_token, write_token, Api, CliError, CliResult};

/// What a command produced.
#[derive(Debug)]
pub enum Output {
    /// A decoded API reply.
    Value(Value),
    /// Raw text such as N-Triples.
    Text(String),
    /// Raw secret bytes, with the decoded reply for `--json`.
    Bytes { raw: Vec<u8>, reply: Value },
    /// A bodiless success, with a human confirmation.
    Done(String),
    /// Already streamed to stdout.
    Streamed,
}

/// Resolves the token: the flag or `AI4_TOKEN` first, then the token file.
pub fn resolve_token(cli: &Cli) -> CliResult<Option<String>> {
    if let Some(t) = cli.token.as_deref().map(str::trim).filter(|t| !t.is_empty()) {
        return Ok(Some(t.to_string()));
    }
    match token_path(cli) {
        Some(p) => read_token(&p),
        None => Ok(None),
    }
}

pub fn token_path(cli: &Cli) -> Option<PathBuf> {
    cli.token_file.clone().or_else(crate::client::default_token_path)
}

/// The serde name of a clap value: kebab-case becomes snake_case.
fn wire<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .replace('-', "_")
}

fn read_input(path: &Path, input: &mut dyn Read) -> CliResult<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        input
            .read_to_string(&mut s)
            .map_err(|e| CliError::Local(format!("reading stdin: {e}")))?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| CliError::Local(format!("cannot read {}: {e}", path.display())))
}

fn parse_json(text: &str, what: &str) -> CliResult<Value> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{what} is not valid JSON: {e}")))
}

/// The payload from `--payload`, `--payload-file`, or `null` when neither.
fn payload(p: &PayloadArgs, input: &mut dyn Read) -> CliResult<Value> {
    match (&p.payload, &p.payload_file) {
        (Some(inline), _) => parse_json(inline, "--payload"),
        (None, Some(path)) => parse_json(&read_input(path, input)?, "payload file"),
        (None, None) => Ok(Value::Null),
    }
}

fn capacity(r: &ResourceArgs) -> Value {
    json!({"gpus": r.gpus, "cpu_ghz": r.cpu_ghz, "disk_gb": r.disk_gb})
}

/// `--metric name=value`; numbers, booleans and JSON literals keep their type.
pub fn parse_metrics(items: &[String]) -> CliResult<Map<String, Value>> {
    let mut out = Map::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .filter(|(k, _)| !k.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--metric expects name=value, got `{item}`")))?;
        let value = serde_json::from_str::<Value>(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.insert(k.to_string(), value);
    }
    Ok(out)
}

fn visibility(v: &str) -> Value {
    if v == "all" {
        return json!("all");
    }
    Value::Array(
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| json!(s))
            .collect(),
    )
}

/// Reads every regular file under `dir` into `{files: {relative/path: text}}`.
fn bundle(dir: &Path) -> CliResult<Value> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
        let fail = |e: std::io::Error| CliError::Local(format!("reading bundle {}: {e}", dir.display()));
        for entry in std::fs::read_dir(dir).map_err(fail)? {
            let path = entry.map_err(fail)?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.is_file() {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Local(format!("cannot read {}: {e}", path.display())))?;
                out.insert(rel, text);
            }
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files)?;
    Ok(json!({ "files": files }))
}

fn secret_url(api: &Api, path: &str) -> reqwest::Url {
    let mut segs = vec!["secrets"];
    segs.extend(path.split('/').filter(|s| !s.is_empty()));
    api.url(&segs)
}

fn role(r: RoleArg) -> Role {
    match r {
        RoleArg::Demo => Role::Demo,
        RoleArg::Full => Role::Full,
    }
}

fn system_now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub struct Ctx<'a> {
    pub cli: &'a Cli,
    pub api: Api,
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn std::io::Write,
}

pub fn execute(ctx: &mut Ctx<'_>) -> CliResult<Output> {
    let api = &ctx.api;
    let get = |segs: &[&str]| api.json(Method::GET, api.url(segs), None).map(Output::Value);
    let post = |segs: &[&str], body: Value| api.json(Method::POST, api.url(segs), Some(&body)).map(Output::Value);
    match &ctx.cli.command {
        Command::Login(a) => login(ctx.cli, a, ctx.stdin),
        Command::Session => get(&["session"]),
        Command::Catalog(c) => catalog(api, c, ctx.stdin),
        Command::Deploy(a) => post(
            &["deployments"],
            json!({
                "kind": wire(&a.kind),
                "module": a.module,
                "resources": capacity(&a.resources),
                "sidecars": a.sidecars.iter().map(wire).collect::<Vec<_>>(),
                "dataset_doi": a.dataset_doi,
            }),
        ),
        Command::Ps(a) => api
            .json(
                Method::GET,
                api.url_with(&["deployments"], &[("state", a.state.as_ref().map(wire))]),
                None,
            )
            .map(Output::Value),
        Command::Inspect { id } => get(&["deployments", id]),
        Command::Stop { id } => api.json(Method::DELETE, api.url(&["deployments", id]), None).map(Output::Value),
        Command::Complete(a) => {
            let metrics = parse_metrics(&a.metrics)?;
            let mut body = json!({"success": !a.failed});
            if !metrics.is_empty() {
                body["metrics"] = Value::Object(metrics);
            }
            post(&["deployments", &a.id, "complete"], body)
        }
        Command::Snapshot { id } => post(&["deployments", id, "snapshot"], json!({})),
        Command::Snapshots => get(&["snapshots"]),
        Command::Restore { snapshot } => post(&["snapshots", snapshot, "restore"], json!({})),
        Command::Secret(c) => secret(api, c, ctx.stdin),
        Command::Endpoint(c) => match c {
            EndpointCmd::Create {
                module,
                min_replicas,
                max_replicas,
                per_replica_concurrency,
                public_tryme,
            } => post(
                &["inference", "endpoints"],
                json!({
                    "module": module,
                    "min_replicas": min_replicas,
                    "max_replicas": max_replicas,
                    "per_replica_concurrency": per_replica_concurrency,
                    "public_tryme": public_tryme,
                }),
            ),
            EndpointCmd::Ls => get(&["inference", "endpoints"]),
            EndpointCmd::Show { id } => get(&["inference", "endpoints", id]),
            EndpointCmd::Invoke { id, payload: p } => {
                post(&["inference", "endpoints", id, "invoke"], payload(p, ctx.stdin)?)
            }
        },
        Command::Async(c) => match c {
            AsyncCmd::Submit { endpoint, payload: p } => post(
                &["inference", "async"],
                json!({"endpoint": endpoint, "payload": payload(p, ctx.stdin)?}),
            ),
            AsyncCmd::Status { id } => get(&["inference", "async", id]),
        },
        Command::Dag(c) => match c {
            DagCmd::Create { spec } => {
                let body = parse_json(&read_input(spec, ctx.stdin)?, "pipeline spec")?;
                post(&["inference", "pipelines"], body)
            }
            DagCmd::Show { id } => get(&["inference", "pipelines", id]),
            DagCmd::Invoke { id, payload: p } => {
                post(&["inference", "pipelines", id, "invoke"], payload(p, ctx.stdin)?)
            }
        },
        Command::Pipeline(c) => match c {
            PipelineCmd::Run {
                module,
                source_ref,
                release,
                bundle: dir,
            } => {
                let mut body = json!({"module": module, "source_ref": source_ref, "release": release});
                if let Some(dir) = dir {
                    body["bundle"] = bundle(dir)?;
                }
                post(&["pipeline-runs"], body)
            }
            PipelineCmd::Show { id } => get(&["pipeline-runs", id]),
        },
        Command::Prov(c) => match c {
            ProvCmd::Graph { module, format } => {
                let url = api.url_with(&["provenance", module, "graph"], &[("format", Some(wire(format)))]);
                match format {
                    GraphFormatArg::Json => api.json(Method::GET, url, None).map(Output::Value),
                    GraphFormatArg::Triples => api.text(Method::GET, url, None).map(Output::Text),
                }
            }
            ProvCmd::Query {
                module,
                pattern,
                subject,
            } => api
                .json(
                    Method::GET,
                    api.url_with(
                        &["provenance", module, "query"],
                        &[("pattern", Some(wire(pattern))), ("subject", subject.clone())],
                    ),
                    None,
                )
                .map(Output::Value),
            ProvCmd::Track { module, payload: p } => post(
                &["provenance", module, "fragments"],
                json!({"source": "tracking", "payload": payload(p, ctx.stdin)?}),
            ),
        },
        Command::Stats => get(&["stats"]),
        Command::Providers => get(&["providers"]),
        Command::Events(a) => events(api, a, ctx.cli.json, ctx.stdout),
        Command::Admin(c) => admin(api, c, ctx.stdin),
    }
}

fn login(cli: &Cli, a: &LoginArgs, input: &mut dyn Read) -> CliResult<Output> {
    let token = match &a.with_token {
        Some(t) => t.trim().to_string(),
        None => {
            let mut line = String::new();
            BufReader::new(input)
                .read_line(&mut line)
                .map_err(|e| CliError::Local(format!("reading token from stdin: {e}")))?;
            line.trim().to_string()
        }
    };
    if token.is_empty() {
        return Err(CliError::Usage("no token given; pass --with-token or pipe it on stdin".into()));
    }
    let path = token_path(cli)
        .ok_or_else(|| CliError::Local("no token file location; set --token-file or HOME".into()))?;
    let reply = if a.offline {
        None
    } else {
        let api = Api::new(&cli.api_url, Some(token.clone()))?;
        Some(api.json(Method::GET, api.url(&["session"]), None)?)
    };
    write_token(&path, &token)?;
    Ok(match reply {
        Some(session) => Output::Value(session),
        None => Output::Done(format!("token stored in {}", path.display())),
    })
}

fn catalog(api: &Api, c: &CatalogCmd, input: &mut dyn Read) -> CliResult<Output> {
    let reply = match c {
        CatalogCmd::List { kind, tags, text } => api.json(
            Method::GET,
            api.url_with(
                &["catalog"],
                &[
                    ("kind", kind.as_ref().map(wire)),
                    ("tags", tags.clone()),
                    ("text", text.clone()),
                ],
            ),
            None,
        )?,
        CatalogCmd::Register {
            metadata,
            kind,
            visibility: vis,
        } => {
            let body = json!({
                "kind": wire(kind),
                "metadata": read_input(metadata, input)?,
                "visibility": visibility(vis),
            });
            api.json(Method::POST, api.url(&["catalog"]), Some(&body))?
        }
        CatalogCmd::Show { id } => api.json(Method::GET, api.url(&["catalog", id]), None)?,
        CatalogCmd::Update { id, metadata } => {
            let body = json!({"metadata": read_input(metadata, input)?});
            api.json(Method::PUT, api.url(&["catalog", id]), Some(&body))?
        }
        CatalogCmd::Validate { id, metadata } => {
            let body = match metadata {
                Some(m) => Some(json!({"metadata": read_input(m, input)?})),
                None => None,
            };
            api.json(Method::POST, api.url(&["catalog", id, "validate"]), body.as_ref())?
        }
        CatalogCmd::Export { id } => api.json(Method::GET, api.url(&["catalog", id, "export"]), None)?,
        CatalogCmd::Schema => api.json(Method::GET, api.url(&["catalog", "schema"]), None)?,
    };
    Ok(Output::Value(reply))
}

fn secret(api: &Api, c: &SecretCmd, input: &mut dyn Read) -> CliResult<Output> {
    match c {
        SecretCmd::Put {
            path,
            value,
            value_b64,
            from_file,
        } => {
            let body = match (value, value_b64, from_file) {
                (Some(v), None, None) => json!({"value": v}),
                (None, Some(b), None) => json!({"value_b64": b}),
                (None, None, Some(f)) => {
                    let bytes = if f.as_os_str() == "-" {
                        let mut buf = Vec::new();
                        input
                            .read_to_end(&mut buf)
                            .map_err(|e| CliError::Local(format!("reading stdin: {e}")))?;
                        buf
                    } else {
                        std::fs::read(f).map_err(|e| CliError::Local(format!("cannot read {}: {e}", f.display())))?
                    };
                    json!({"value_b64": B64.encode(bytes)})
                }
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --value, --value-b64, --from-file".into(),
                    ))
                }
            };
            api.send(Method::PUT, secret_url(api, path), Some(&body))?;
            Ok(Output::Done(format!("stored {path}")))
        }
        SecretCmd::Get { path } => {
            let reply = api.json(Method::GET, secret_url(api, path), None)?;
            let raw = reply["value_b64"]
                .as_str()
                .and_then(|s| B64.decode(s).ok())
                .ok_or_else(|| CliError::Transport("secret reply lacks value_b64".into()))?;
            Ok(Output::Bytes { raw, reply })
        }
        SecretCmd::Ls { prefix } => {
            let q = (!prefix.is_empty()).then(|| prefix.clone());
            api.json(Method::GET, api.url_with(&["secrets"], &[("prefix", q)]), None)
                .map(Output::Value)
        }
        SecretCmd::Rm { path } => {
            api.send(Method::DELETE, secret_url(api, path), None)?;
            Ok(Output::Done(format!("deleted {path}")))
        }
    }
}

/// Reads the SSE stream, printing each entry as one line.
fn events(api: &Api, a: &EventsArgs, as_json: bool, out: &mut dyn std::io::Write) -> CliResult<Output> {
    let url = api.url_with(&["events"], &[("since", Some(a.since.to_string()))]);
    let resp = api.send(Method::GET, url, None)?;
    let mut seen = 0usize;
    if a.limit == Some(0) {
        return Ok(Output::Streamed);
    }
    let mut data = String::new();
    for line in BufReader::new(resp).lines() {
        let line = line.map_err(|e| CliError::Transport(format!("event stream: {e}")))?;
        if let Some(d) = line.strip_prefix("data:") {
            data.push_str(d.trim_start());
            continue;
        }
        if !line.is_empty() || data.is_empty() {
            continue;
        }
        let entry: Value = parse_json(&data, "event").map_err(|e| CliError::Transport(e.to_string()))?;
        data.clear();
        let text = if as_json {
            entry.to_string()
        } else {
            format!(
                "{}\t{}\t{}",
                entry["seq"],
                entry["kind"].as_str().unwrap_or(""),
                entry["payload"]
            )
        };
        writeln!(out, "{text}").map_err(|e| CliError::Local(format!("writing output: {e}")))?;
        seen += 1;
        if a.limit.is_some_and(|l| seen >= l) {
            break;
        }
    }
    Ok(Output::Streamed)
}

fn admin(api: &Api, c: &AdminCmd, input: &mut dyn Read) -> CliResult<Output> {
    let post = |segs: &[&str], body: Value| api.json(Method::POST, api.url(segs), Some(&body)).map(Output::Value);
    match c {
        AdminCmd::MintToken {
            user,
            vo,
            role: r,
            ttl_ms,
            admin,
            hmac_key,
        } => match hmac_key.as_deref().filter(|k| !k.is_empty()) {
            Some(key) => {
                let claims = Claims {
                    user: user.as_str().into(),
                    vo: vo.as_str().into(),
                    role: role(*r),
                    exp: system_now_ms().saturating_add(*ttl_ms),
                    admin: *admin,
                };
                let signer = TokenSigner::new(key).map_err(|e| CliError::Usage(format!("API_HMAC_KEY: {e}")))?;
                Ok(Output::Value(json!({"token": signer.mint(&claims), "claims": claims})))
            }
            None => post(
                &["admin", "tokens"],
                json!({"user": user, "vo": vo, "role": wire(r), "ttl_ms": ttl_ms, "admin": admin}),
            ),
        },
        AdminCmd::AddProvider {
            name,
            country,
            endpoint,
            capacity: cap,
            supported_vos,
            fixture,
        } => match fixture {
            Some(f) => {
                let specs = parse_provider_fixture(&read_input(f, input)?)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                let mut created = Vec::with_capacity(specs.len());
                for spec in specs {
                    let body = serde_json::to_value(&spec).expect("spec serializes");
                    created.push(api.json(Method::POST, api.url(&["admin", "providers"]), Some(&body))?);
                }
                Ok(Output::Value(Value::Array(created)))
            }
            None => post(
                &["admin", "providers"],
                json!({
                    "name": name,
                    "country": country,
                    "endpoint": endpoint,
                    "capacity": capacity(cap),
                    "supported_vos": supported_vos,
                }),
            ),
        },
        AdminCmd::Heartbeat {
            id,
            gpus,
            cpu_ghz,
            disk_gb,
        } => {
            let body = match (gpus, cpu_ghz, disk_gb) {
                (Some(g), Some(c), Some(d)) => json!({"free": {"gpus": g, "cpu_ghz": c, "disk_gb": d}}),
                _ => json!({}),
            };
            post(&["admin", "providers", id, "heartbeat"], body)
        }
        AdminCmd::AddVo {
            id,
            name,
            default_user_storage_quota_gb,
            tryme_allow_gpus,
        } => {
            let mut body = json!({"id": id, "name": name, "tryme_allow_gpus": tryme_allow_gpus});
            if let Some(q) = default_user_storage_quota_gb {
                body["default_user_storage_quota_gb"] = json!(q);
            }
            post(&["admin", "vos"], body)
        }
        AdminCmd::SetMember {
            vo,
            user,
            role: r,
            admin,
        } => api
            .json(
                Method::PUT,
                api.url(&["admin", "vos", vo, "members", user]),
                Some(&json!({"role": wire(r), "admin": admin})),
            )
            .map(Output::Value),
        AdminCmd::Sla {
            vo,
            provider,
            caps,
            valid_from,
            valid_until,
        } => post(
            &["admin", "slas"],
            json!({
                "vo": vo,
                "provider": provider,
                "caps": capacity(caps),
                "valid_from": valid_from,
                "valid_until": valid_until,
            }),
        ),
        AdminCmd::Tick => post(&["admin", "tick"], json!({})),
        AdminCmd::Snapshot => {
            api.send(Method::POST, api.url(&["admin", "snapshot"]), None)?;
            Ok(Output::Done("snapshot written".into()))
        }
    }
}

/// Fields shown for each element of a list, when present.
const SUMMARY_FIELDS: [&str; 10] = [
    "kind", "state", "status", "name", "module", "provider", "path", "vo", "replicas", "created_at",
];

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Human rendering of an API reply.
pub fn render(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Array(items) if items.is_empty() => "(none)".into(),
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Object(m) => {
                    let head = m.get("id").map(scalar).unwrap_or_default();
                    let rest: Vec<String> = SUMMARY_FIELDS
                        .iter()
                        .filter_map(|k| match m.get(*k) {
                            Some(Value::Null) | None => None,
                            Some(Value::Object(_) | Value::Array(_)) => None,
                            Some(x) => Some(format!("{k}={}", scalar(x))),
                        })
                        .collect();
                    [head].into_iter().chain(rest).filter(|s| !s.is_empty()).collect::<Vec<_>>().join("  ")
                }
                other => scalar(other),
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Value::Object(m) => m
            .iter()
            .map(|(k, x)| format!("{k}: {}", scalar(x)))
            .collect::<Vec<_>>()
            .join("\n"),
        other => scalar(other),
    }
}
