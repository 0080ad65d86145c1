//! Metadata schema as a rule table.
//!
//! Each [`FieldRule`] targets a slash-separated path; `*` matches every
//! element of an array. Validation resolves each path against the document,
//! so a missing parent makes every child absent and a missing required child
//! is reported at its own leaf path. Type errors on a container suppress the
//! rules of its children.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const SCHEMA_VERSION: &str = "1.0.0";
pub const SUMMARY_MAX_CHARS: usize = 300;

/// SPDX identifiers accepted for `license`, plus anything prefixed
/// `LicenseRef-`.
pub const SPDX_LICENSES: &[&str] = &[
    "0BSD",
    "AGPL-3.0-only",
    "AGPL-3.0-or-later",
    "Apache-2.0",
    "Artistic-2.0",
    "BSD-1-Clause",
    "BSD-2-Clause",
    "BSD-3-Clause",
    "BSD-3-Clause-Clear",
    "BSL-1.0",
    "CC-BY-4.0",
    "CC-BY-NC-4.0",
    "CC-BY-SA-4.0",
    "CC0-1.0",
    "CDDL-1.0",
    "EPL-1.0",
    "EPL-2.0",
    "EUPL-1.2",
    "GPL-2.0-only",
    "GPL-2.0-or-later",
    "GPL-3.0-only",
    "GPL-3.0-or-later",
    "ISC",
    "LGPL-2.1-only",
    "LGPL-2.1-or-later",
    "LGPL-3.0-only",
    "LGPL-3.0-or-later",
    "MIT",
    "MIT-0",
    "MPL-2.0",
    "OpenRAIL",
    "Unlicense",
    "Zlib",
];

const DOI_PATTERN: &str = r"^10\.[0-9]{4,9}/\S+$";
const URI_PATTERN: &str = r"^[a-zA-Z][a-zA-Z0-9+.-]*://\S+$";
const VERSION_PATTERN: &str = r"^[0-9]+\.[0-9]+\.[0-9]+$";

const ROOT_KEYS: &[&str] = &[
    "schema_version",
    "title",
    "summary",
    "description",
    "authors",
    "license",
    "doi",
    "links",
    "tags",
    "dates",
];
const LINK_KEYS: &[&str] = &["dataset", "weights", "docker_image", "source_repo"];
const TAG_KEYS: &[&str] = &["libraries", "data_types", "categories"];
const AUTHOR_KEYS: &[&str] = &["name", "affiliation"];
const DATE_KEYS: &[&str] = &["created", "modified"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsonType {
    String,
    Integer,
    Array,
    Object,
}

impl JsonType {
    fn matches(self, v: &Value) -> bool {
        match self {
            JsonType::String => v.is_string(),
            JsonType::Integer => v.is_u64(),
            JsonType::Array => v.is_array(),
            JsonType::Object => v.is_object(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            JsonType::String => "string",
            JsonType::Integer => "integer",
            JsonType::Array => "array",
            JsonType::Object => "object",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Rule {
    Required,
    Type(JsonType),
    MinLength(usize),
    MaxLength(usize),
    Pattern(&'static str),
    License,
    Keys(&'static [&'static str]),
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Required => "required",
            Rule::Type(_) => "type",
            Rule::MinLength(_) => "minLength",
            Rule::MaxLength(_) => "maxLength",
            Rule::Pattern(_) => "pattern",
            Rule::License => "enum",
            Rule::Keys(_) => "additionalProperties",
        }
    }
}

#[derive(Debug)]
pub struct FieldRule {
    pub path: &'static str,
    pub rules: &'static [Rule],
}

use JsonType as T;
use Rule::*;

pub static RULES: &[FieldRule] = &[
    FieldRule { path: "", rules: &[Type(T::Object), Keys(ROOT_KEYS)] },
    FieldRule { path: "/schema_version", rules: &[Type(T::String), Pattern(VERSION_PATTERN)] },
    FieldRule { path: "/title", rules: &[Required, Type(T::String), MinLength(1)] },
    FieldRule {
        path: "/summary",
        rules: &[Required, Type(T::String), MinLength(1), MaxLength(SUMMARY_MAX_CHARS)],
    },
    FieldRule { path: "/description", rules: &[Type(T::String)] },
    FieldRule { path: "/authors", rules: &[Type(T::Array)] },
    FieldRule { path: "/authors/*", rules: &[Type(T::Object), Keys(AUTHOR_KEYS)] },
    FieldRule { path: "/authors/*/name", rules: &[Required, Type(T::String), MinLength(1)] },
    FieldRule { path: "/authors/*/affiliation", rules: &[Type(T::String)] },
    FieldRule { path: "/license", rules: &[Required, Type(T::String), License] },
    FieldRule { path: "/doi", rules: &[Type(T::String), Pattern(DOI_PATTERN)] },
    FieldRule { path: "/links", rules: &[Type(T::Object), Keys(LINK_KEYS)] },
    FieldRule { path: "/links/source_repo", rules: &[Required, Type(T::String), Pattern(URI_PATTERN)] },
    FieldRule { path: "/links/dataset", rules: &[Type(T::String), Pattern(URI_PATTERN)] },
    FieldRule { path: "/links/weights", rules: &[Type(T::String), Pattern(URI_PATTERN)] },
    FieldRule { path: "/links/docker_image", rules: &[Type(T::String), MinLength(1)] },
    FieldRule { path: "/tags", rules: &[Type(T::Object), Keys(TAG_KEYS)] },
    FieldRule { path: "/tags/libraries", rules: &[Type(T::Array)] },
    FieldRule { path: "/tags/libraries/*", rules: &[Type(T::String), MinLength(1)] },
    FieldRule { path: "/tags/data_types", rules: &[Type(T::Array)] },
    FieldRule { path: "/tags/data_types/*", rules: &[Type(T::String), MinLength(1)] },
    FieldRule { path: "/tags/categories", rules: &[Type(T::Array)] },
    FieldRule { path: "/tags/categories/*", rules: &[Type(T::String), MinLength(1)] },
    FieldRule { path: "/dates", rules: &[Type(T::Object), Keys(DATE_KEYS)] },
    FieldRule { path: "/dates/created", rules: &[Type(T::Integer)] },
    FieldRule { path: "/dates/modified", rules: &[Type(T::Integer)] },
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub rule: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn from_errors(errors: Vec<ValidationIssue>) -> Self {
        Self {
            valid: errors.is_empty(),
            errors,
        }
    }

    pub fn summary(&self) -> String {
        self.errors
            .iter()
            .map(|e| format!("{} ({}): {}", display_path(&e.path), e.rule, e.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "/"
    } else {
        path
    }
}

fn regex(pattern: &'static str) -> &'static Regex {
    static CACHE: OnceLock<Vec<(&'static str, Regex)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| {
        [DOI_PATTERN, URI_PATTERN, VERSION_PATTERN]
            .into_iter()
            .map(|p| (p, Regex::new(p).expect("static pattern")))
            .collect()
    });
    &cache
        .iter()
        .find(|(p, _)| *p == pattern)
        .expect("pattern registered in cache")
        .1
}

pub fn is_valid_doi(s: &str) -> bool {
    regex(DOI_PATTERN).is_match(s)
}

/// Parse a YAML or JSON document into a JSON value.
pub fn parse_document(text: &str) -> Result<Value, String> {
    match serde_json::from_str::<Value>(text) {
        Ok(v) => Ok(v),
        Err(json_err) => serde_yaml::from_str::<Value>(text)
            .map_err(|yaml_err| format!("not JSON ({json_err}) nor YAML ({yaml_err})")),
    }
}

/// Validate raw text. Unparseable input yields exactly one error at `/`.
pub fn validate_text(text: &str) -> ValidationReport {
    match parse_document(text) {
        Ok(doc) => validate_value(&doc),
        Err(message) => ValidationReport::from_errors(vec![ValidationIssue {
            path: "/".into(),
            rule: "parse".into(),
            message,
        }]),
    }
}

enum Lookup<'a> {
    Present(&'a Value),
    Absent,
}

fn resolve<'a>(doc: &'a Value, path: &str) -> Vec<(String, Lookup<'a>)> {
    let mut frontier = vec![(String::new(), Lookup::Present(doc))];
    for seg in path.split('/').skip(1) {
        let mut next = Vec::new();
        for (prefix, lookup) in frontier {
            match lookup {
                Lookup::Absent => {
                    if seg != "*" {
                        next.push((format!("{prefix}/{seg}"), Lookup::Absent));
                    }
                }
                Lookup::Present(v) => {
                    if seg == "*" {
                        if let Value::Array(items) = v {
                            for (i, item) in items.iter().enumerate() {
                                next.push((format!("{prefix}/{i}"), Lookup::Present(item)));
                            }
                        }
                    } else if let Value::Object(map) = v {
                        let child = map.get(seg).map_or(Lookup::Absent, Lookup::Present);
                        next.push((format!("{prefix}/{seg}"), child));
                    }
                }
            }
        }
        frontier = next;
    }
    frontier
}

/// Validate a parsed document against [`RULES`]. Pure.
pub fn validate_value(doc: &Value) -> ValidationReport {
    let mut errors = Vec::new();
    // Paths whose container failed its type rule; children are not checked.
    let mut broken: Vec<String> = Vec::new();

    for field in RULES {
        for (path, lookup) in resolve(doc, field.path) {
            if broken.iter().any(|b| path.starts_with(&format!("{b}/")) || b.is_empty()) {
                continue;
            }
            let value = match lookup {
                Lookup::Absent => {
                    if field.rules.iter().any(|r| matches!(r, Required)) {
                        errors.push(ValidationIssue {
                            path: path.clone(),
                            rule: "required".into(),
                            message: "required field is missing".into(),
                        });
                    }
                    continue;
                }
                Lookup::Present(v) => v,
            };
            for rule in field.rules {
                if let Some(message) = check_rule(rule, value) {
                    let is_type = matches!(rule, Type(_));
                    errors.push(ValidationIssue {
                        path: if path.is_empty() { "/".into() } else { path.clone() },
                        rule: rule.name().into(),
                        message,
                    });
                    if is_type {
                        broken.push(path.clone());
                        break;
                    }
                }
            }
        }
    }

    if let (Some(created), Some(modified)) = (
        doc.pointer("/dates/created").and_then(Value::as_u64),
        doc.pointer("/dates/modified").and_then(Value::as_u64),
    ) {
        if modified < created {
            errors.push(ValidationIssue {
                path: "/dates/modified".into(),
                rule: "order".into(),
                message: format!("modified ({modified}) precedes created ({created})"),
            });
        }
    }

    ValidationReport::from_errors(errors)
}

fn check_rule(rule: &Rule, value: &Value) -> Option<String> {
    match *rule {
        Required => None,
        Type(t) => (!t.matches(value)).then(|| format!("expected {}", t.name())),
        MinLength(n) => value
            .as_str()
            .filter(|s| s.chars().count() < n)
            .map(|_| format!("shorter than {n} characters")),
        MaxLength(n) => value
            .as_str()
            .map(|s| s.chars().count())
            .filter(|&len| len > n)
            .map(|len| format!("{len} characters exceeds maximum of {n}")),
        Pattern(p) => value
            .as_str()
            .filter(|s| !regex(p).is_match(s))
            .map(|s| format!("`{s}` does not match {p}")),
        License => value
            .as_str()
            .filter(|s| !(SPDX_LICENSES.contains(s) || is_license_ref(s)))
            .map(|s| format!("`{s}` is not a recognised SPDX identifier")),
        Keys(allowed) => value.as_object().and_then(|map| {
            let extra: Vec<&str> = map
                .keys()
                .map(String::as_str)
                .filter(|k| !allowed.contains(k))
                .collect();
            (!extra.is_empty()).then(|| format!("unknown field(s): {}", extra.join(", ")))
        }),
    }
}

fn is_license_ref(s: &str) -> bool {
    s.strip_prefix("LicenseRef-")
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-'))
}

/// Paths in [`RULES`] marked required, wildcards included.
pub fn required_paths() -> impl Iterator<Item = &'static str> {
    RULES
        .iter()
        .filter(|f| f.rules.iter().any(|r| matches!(r, Required)))
        .map(|f| f.path)
}

/// The rule table rendered as a JSON Schema document for publication.
pub fn schema_document() -> Value {
    let mut root = json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": format!("urn:fedplane:metadata:{SCHEMA_VERSION}"),
        "version": SCHEMA_VERSION,
    });
    for field in RULES {
        let mut node = &mut root;
        let segments: Vec<&str> = field.path.split('/').skip(1).collect();
        for (i, seg) in segments.iter().enumerate() {
            let is_last = i + 1 == segments.len();
            if *seg == "*" {
                node = node
                    .as_object_mut()
                    .expect("schema node")
                    .entry("items")
                    .or_insert_with(|| json!({}));
            } else {
                let obj = node.as_object_mut().expect("schema node");
                if is_last && field.rules.iter().any(|r| matches!(r, Required)) {
                    let req = obj.entry("required").or_insert_with(|| json!([]));
                    req.as_array_mut().expect("required list").push(json!(seg));
                }
                node = obj
                    .entry("properties")
                    .or_insert_with(|| json!({}))
                    .as_object_mut()
                    .expect("properties")
                    .entry(seg.to_string())
                    .or_insert_with(|| json!({}));
            }
        }
        let obj: &mut Map<String, Value> = node.as_object_mut().expect("schema node");
        for rule in field.rules {
            match *rule {
                Required => {}
                Type(t) => {
                    obj.insert("type".into(), json!(t.name()));
                }
                MinLength(n) => {
                    obj.insert("minLength".into(), json!(n));
                }
                MaxLength(n) => {
                    obj.insert("maxLength".into(), json!(n));
                }
                Pattern(p) => {
                    obj.insert("pattern".into(), json!(p));
                }
                License => {
                    obj.insert("enum".into(), json!(SPDX_LICENSES));
                }
                Keys(_) => {
                    obj.insert("additionalProperties".into(), json!(false));
                }
            }
        }
    }
    root
}
