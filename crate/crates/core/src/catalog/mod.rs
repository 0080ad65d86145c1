//! Module and tool catalog: validated records, per-VO views and interop export.

mod interop;
pub mod schema;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{IdCounter, Millis, ModuleId, VoId};

pub use interop::{import_interop, Distribution, InteropProfile};
pub use schema::{parse_document, validate_text, validate_value, ValidationIssue, ValidationReport};

pub const DEFAULT_PLATFORM_URI: &str = "https://fedplane.local";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affiliation: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Links {
    pub source_repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docker_image: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tags {
    #[serde(default)]
    pub libraries: Vec<String>,
    #[serde(default)]
    pub data_types: Vec<String>,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl Tags {
    pub fn get(&self, field: TagField) -> &[String] {
        match field {
            TagField::Libraries => &self.libraries,
            TagField::DataTypes => &self.data_types,
            TagField::Categories => &self.categories,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.libraries
            .iter()
            .chain(&self.data_types)
            .chain(&self.categories)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dates {
    pub created: Millis,
    pub modified: Millis,
}

fn default_schema_version() -> String {
    schema::SCHEMA_VERSION.to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataDoc {
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    pub title: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub authors: Vec<Author>,
    pub license: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doi: Option<String>,
    pub links: Links,
    #[serde(default)]
    pub tags: Tags,
    #[serde(default)]
    pub dates: Dates,
}

impl MetadataDoc {
    /// Validate a raw document and convert it to the typed form.
    pub fn from_value(doc: &Value) -> Result<MetadataDoc> {
        let report = validate_value(doc);
        if !report.valid {
            return Err(Error::validation(format!("metadata invalid: {}", report.summary())));
        }
        serde_json::from_value(doc.clone())
            .map_err(|e| Error::validation(format!("metadata invalid: {e}")))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("metadata serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Module,
    Tool,
}

/// Which VOs can see a record: `"all"` or an explicit list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Visibility {
    All,
    Vos(BTreeSet<VoId>),
}

impl Default for Visibility {
    fn default() -> Self {
        Visibility::All
    }
}

impl Visibility {
    pub fn includes(&self, vo: &str) -> bool {
        match self {
            Visibility::All => true,
            Visibility::Vos(set) => set.contains(vo),
        }
    }
}

impl Serialize for Visibility {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Visibility::All => s.serialize_str("all"),
            Visibility::Vos(set) => set.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Visibility {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Word(String),
            List(BTreeSet<VoId>),
        }
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "all" => Ok(Visibility::All),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "visibility must be \"all\" or a list of VO ids, got \"{w}\""
            ))),
            Repr::List(set) => Ok(Visibility::Vos(set)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub id: ModuleId,
    pub kind: RecordKind,
    pub metadata: MetadataDoc,
    /// Set by the quality pipeline's refresh stage after a successful build.
    pub image_digest: Option<String>,
    pub visibility: Visibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagField {
    Libraries,
    DataTypes,
    Categories,
}

/// A VO-level catalog restriction: a record passes if it carries any of the
/// listed tags in the given field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPredicate {
    pub field: TagField,
    pub any_of: BTreeSet<String>,
}

impl TagPredicate {
    pub fn matches(&self, tags: &Tags) -> bool {
        tags.get(self.field).iter().any(|t| self.any_of.contains(t))
    }
}

/// User-supplied listing filter. All present criteria must hold.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogFilter {
    #[serde(default)]
    pub kind: Option<RecordKind>,
    /// Every tag here must appear in some tag list of the record.
    #[serde(default)]
    pub tags: Vec<String>,
    /// Case-insensitive substring of title, summary or description.
    #[serde(default)]
    pub text: Option<String>,
}

impl CatalogFilter {
    pub fn matches(&self, record: &ModuleRecord) -> bool {
        if self.kind.is_some_and(|k| k != record.kind) {
            return false;
        }
        let tags = &record.metadata.tags;
        if !self.tags.iter().all(|t| tags.all().any(|have| have == t)) {
            return false;
        }
        if let Some(text) = &self.text {
            let needle = text.to_lowercase();
            let md = &record.metadata;
            let hay = [Some(&md.title), Some(&md.summary), md.description.as_ref()];
            if !hay.iter().flatten().any(|h| h.to_lowercase().contains(&needle)) {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    records: BTreeMap<ModuleId, ModuleRecord>,
    ids: IdCounter,
    platform_uri: String,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::new(DEFAULT_PLATFORM_URI)
    }
}

impl Catalog {
    pub fn new(platform_uri: impl Into<String>) -> Self {
        Self {
            records: BTreeMap::new(),
            ids: IdCounter::default(),
            platform_uri: platform_uri.into(),
        }
    }

    pub fn platform_uri(&self) -> &str {
        &self.platform_uri
    }

    pub fn record_uri(&self, id: &ModuleId) -> String {
        format!("{}/catalog/{}", self.platform_uri, id)
    }

    pub fn next_id(&self) -> ModuleId {
        ModuleId::from_seq(self.ids.peek_seq())
    }

    /// Register a record. Dates are auto-filled: `created = modified = now`.
    pub fn register(
        &mut self,
        kind: RecordKind,
        metadata: &Value,
        visibility: Visibility,
        now: Millis,
    ) -> Result<ModuleId> {
        let mut doc = MetadataDoc::from_value(metadata)?;
        doc.dates = Dates {
            created: now,
            modified: now,
        };
        let id = ModuleId::from_seq(self.ids.next_seq());
        self.records.insert(
            id.clone(),
            ModuleRecord {
                id: id.clone(),
                kind,
                metadata: doc,
                image_digest: None,
                visibility,
            },
        );
        Ok(id)
    }

    /// Replace a record's metadata. Invalid metadata leaves the record intact.
    pub fn update(&mut self, id: &ModuleId, metadata: &Value, now: Millis) -> Result<&ModuleRecord> {
        let existing = self.get(id)?;
        let mut doc = MetadataDoc::from_value(metadata)?;
        let created = existing.metadata.dates.created;
        doc.dates = Dates {
            created,
            modified: now.max(existing.metadata.dates.modified).max(created),
        };
        let record = self.records.get_mut(id).expect("checked above");
        record.metadata = doc;
        Ok(record)
    }

    pub fn get(&self, id: &ModuleId) -> Result<&ModuleRecord> {
        self.records
            .get(id)
            .ok_or_else(|| Error::not_found(format!("catalog record {id}")))
    }

    pub fn contains(&self, id: &ModuleId) -> bool {
        self.records.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ModuleRecord> {
        self.records.values()
    }

    pub fn set_image_digest(&mut self, id: &ModuleId, digest: String) -> Result<()> {
        let record = self
            .records
            .get_mut(id)
            .ok_or_else(|| Error::not_found(format!("catalog record {id}")))?;
        record.image_digest = Some(digest);
        Ok(())
    }

    /// Records visible to `vo` that pass the VO's predicate and the filter.
    pub fn list(
        &self,
        vo: &str,
        vo_predicate: Option<&TagPredicate>,
        filter: &CatalogFilter,
    ) -> Vec<&ModuleRecord> {
        self.records
            .values()
            .filter(|r| r.visibility.includes(vo))
            .filter(|r| vo_predicate.is_none_or(|p| p.matches(&r.metadata.tags)))
            .filter(|r| filter.matches(r))
            .collect()
    }

    /// Re-validate every stored record; returns the failing ones.
    pub fn audit(&self) -> Vec<(ModuleId, ValidationReport)> {
        self.records
            .values()
            .filter_map(|r| {
                let report = validate_value(&r.metadata.to_value());
                (!report.valid).then(|| (r.id.clone(), report))
            })
            .collect()
    }

    pub fn export_interop(&self, id: &ModuleId) -> Result<InteropProfile> {
        let record = self.get(id)?;
        Ok(interop::export(record, &self.record_uri(id)))
    }
}
