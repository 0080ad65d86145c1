//! Flat DCAT-style interop profile.
//!
//! | profile field  | metadata source                                  |
//! |----------------|--------------------------------------------------|
//! | identifier     | `doi`, else the record's platform URI            |
//! | title          | `title`                                          |
//! | description    | `summary`                                        |
//! | license        | `license`                                        |
//! | creator[]      | `authors[].name`                                 |
//! | landingPage    | `links.source_repo`                              |
//! | distribution[] | `links.{dataset,weights,docker_image}` by role   |
//! | keyword[]      | union of all tag lists, sorted, deduplicated     |
//! | issued         | `dates.created`                                  |
//! | modified       | `dates.modified`                                 |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{schema::is_valid_doi, ModuleRecord};
use crate::types::Millis;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distribution {
    pub role: String,
    #[serde(rename = "accessURL")]
    pub access_url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteropProfile {
    pub identifier: String,
    pub title: String,
    pub description: String,
    pub license: String,
    pub creator: Vec<String>,
    #[serde(rename = "landingPage")]
    pub landing_page: String,
    pub distribution: Vec<Distribution>,
    pub keyword: Vec<String>,
    pub issued: Millis,
    pub modified: Millis,
}

pub(super) fn export(record: &ModuleRecord, record_uri: &str) -> InteropProfile {
    let md = &record.metadata;
    let mut distribution: Vec<Distribution> = [
        ("dataset", &md.links.dataset),
        ("docker_image", &md.links.docker_image),
        ("weights", &md.links.weights),
    ]
    .into_iter()
    .filter_map(|(role, uri)| {
        uri.as_ref().map(|u| Distribution {
            role: role.to_string(),
            access_url: u.clone(),
        })
    })
    .collect();
    distribution.sort_by(|a, b| a.role.cmp(&b.role));

    let keyword: BTreeSet<&String> = md.tags.all().collect();

    InteropProfile {
        identifier: md.doi.clone().unwrap_or_else(|| record_uri.to_string()),
        title: md.title.clone(),
        description: md.summary.clone(),
        license: md.license.clone(),
        creator: md.authors.iter().map(|a| a.name.clone()).collect(),
        landing_page: md.links.source_repo.clone(),
        distribution,
        keyword: keyword.into_iter().cloned().collect(),
        issued: md.dates.created,
        modified: md.dates.modified,
    }
}

/// Inverse mapping back to a (partial) metadata document.
///
/// Tags cannot be split back into their original lists, so keywords are
/// dropped; every required field is reconstructed.
pub fn import_interop(profile: &InteropProfile) -> Value {
    let mut links = serde_json::Map::new();
    links.insert("source_repo".into(), json!(profile.landing_page));
    for d in &profile.distribution {
        links.insert(d.role.clone(), json!(d.access_url));
    }
    let mut doc = json!({
        "title": profile.title,
        "summary": profile.description,
        "license": profile.license,
        "authors": profile.creator.iter().map(|n| json!({"name": n})).collect::<Vec<_>>(),
        "links": links,
        "dates": {"created": profile.issued, "modified": profile.modified},
    });
    if is_valid_doi(&profile.identifier) {
        doc["doi"] = json!(profile.identifier);
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::canonical::to_canonical_json;

    fn catalog_with(doc: Value) -> (Catalog, crate::types::ModuleId) {
        let mut cat = Catalog::default();
        let id = cat.register(RecordKind::Module, &doc, Visibility::All, 42).unwrap();
        (cat, id)
    }

    #[test]
    fn declared_field_mapping() {
        let (cat, id) = catalog_with(json!({
            "title": "T",
            "summary": "S",
            "license": "MIT",
            "doi": "10.5281/zenodo.99",
            "links": {"source_repo": "https://git.example/r", "weights": "https://w.example/x"},
            "tags": {"libraries": ["torch"], "categories": ["cv", "torch"]}
        }));
        let p = cat.export_interop(&id).unwrap();
        assert_eq!(p.title, "T");
        assert_eq!(p.identifier, "10.5281/zenodo.99");
        assert_eq!(p.landing_page, "https://git.example/r");
        assert_eq!(p.keyword, vec!["cv", "torch"]);
        assert_eq!(p.distribution.len(), 1);
        assert_eq!(p.issued, 42);
    }

    #[test]
    fn identifier_falls_back_to_platform_uri() {
        let (cat, id) = catalog_with(json!({
            "title": "T", "summary": "S", "license": "MIT",
            "links": {"source_repo": "https://git.example/r"}
        }));
        let p = cat.export_interop(&id).unwrap();
        assert_eq!(p.identifier, format!("{DEFAULT_PLATFORM_URI}/catalog/{id}"));
    }

    #[test]
    fn canonical_export_has_sorted_keys() {
        let (cat, id) = catalog_with(json!({
            "title": "T", "summary": "S", "license": "MIT",
            "links": {"source_repo": "https://git.example/r"}
        }));
        let text = to_canonical_json(&cat.export_interop(&id).unwrap());
        let keys: Vec<&str> = [
            "creator", "description", "distribution", "identifier", "issued", "keyword",
            "landingPage", "license", "modified", "title",
        ]
        .to_vec();
        let positions: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn round_trip_preserves_required_fields() {
        let (cat, id) = catalog_with(json!({
            "title": "T", "summary": "S", "license": "Apache-2.0",
            "authors": [{"name": "A"}],
            "links": {"source_repo": "https://git.example/r", "dataset": "https://d.example/1"}
        }));
        let back = import_interop(&cat.export_interop(&id).unwrap());
        assert!(validate_value(&back).valid, "{}", validate_value(&back).summary());
        let original = &cat.get(&id).unwrap().metadata;
        let restored = MetadataDoc::from_value(&back).unwrap();
        assert_eq!(restored.title, original.title);
        assert_eq!(restored.summary, original.summary);
        assert_eq!(restored.license, original.license);
        assert_eq!(restored.links, original.links);
    }
}
