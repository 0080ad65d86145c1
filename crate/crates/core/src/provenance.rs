//! Lifecycle fragments and their compilation into a PROV-style graph.
//!
//! Mapping table (version [`MAPPING_VERSION`]):
//!
//! | fragment / field                 | node                              | edge                                   |
//! |----------------------------------|-----------------------------------|----------------------------------------|
//! | catalog (latest) module          | Entity `model:<module>`           |                                        |
//! | catalog `authors[].name`         | Agent `agent:author:<name>`       | model wasAttributedTo author           |
//! | catalog `links.dataset`          | Entity `dataset:<uri>`            | model wasDerivedFrom dataset           |
//! | pipeline `run_id`                | Activity `build:<run_id>`         | model wasGeneratedBy build             |
//! | training `job_id`                | Activity `training:<job_id>`      | model wasGeneratedBy training          |
//! |                                  |                                   | training used dataset                  |
//! | training `owner`                 | Agent `agent:user:<owner>`        | training wasAssociatedWith owner       |
//! | tracking `metrics`               | labels `metric:<k>` on training   |                                        |
//!
//! A `links.dataset` of the form `module:<id>` names another catalog record;
//! it maps to `model:<id>` and that record's own derivation is followed.
//! Fragments are processed in (ts, canonical payload, source) order, so the
//! graph depends only on the fragment multiset.

use std::collections::{BTreeMap, BTreeSet};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonical_value, to_canonical_json};
use crate::error::{Error, Result};
use crate::types::{FragmentId, IdCounter, Millis, ModuleId};

pub const MAPPING_VERSION: &str = "1";

const ID_SAFE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~')
    .remove(b':')
    .remove(b'/');

fn encode(s: &str) -> String {
    utf8_percent_encode(s, ID_SAFE).to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentSource {
    Catalog,
    Pipeline,
    Training,
    Tracking,
}

impl FragmentSource {
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            FragmentSource::Catalog => &["metadata"],
            FragmentSource::Pipeline => &["run_id", "digest"],
            FragmentSource::Training => &["job_id", "provider", "resources"],
            FragmentSource::Tracking => &["metrics"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvFragment {
    pub id: FragmentId,
    pub module: ModuleId,
    pub source: FragmentSource,
    pub payload: Value,
    pub ts: Millis,
}

pub fn validate_payload(source: FragmentSource, payload: &Value) -> Result<()> {
    let obj = payload
        .as_object()
        .filter(|o| !o.is_empty())
        .ok_or_else(|| Error::validation("fragment payload must be a non-empty object"))?;
    let missing: Vec<&str> = source
        .required_keys()
        .iter()
        .copied()
        .filter(|k| obj.get(*k).is_none_or(Value::is_null))
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "{source:?} fragment is missing required keys: {}",
            missing.join(", ")
        )));
    }
    let object_keys: &[&str] = match source {
        FragmentSource::Catalog => &["metadata"],
        FragmentSource::Tracking => &["metrics"],
        _ => &[],
    };
    for k in object_keys {
        if !obj[*k].is_object() {
            return Err(Error::validation(format!("fragment key `{k}` must be an object")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Entity,
    Activity,
    Agent,
}

/// Variant order matches the lexicographic order of the wire names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Relation {
    Used,
    WasAssociatedWith,
    WasAttributedTo,
    WasDerivedFrom,
    WasGeneratedBy,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::WasGeneratedBy => "wasGeneratedBy",
            Relation::Used => "used",
            Relation::WasAssociatedWith => "wasAssociatedWith",
            Relation::WasAttributedTo => "wasAttributedTo",
            Relation::WasDerivedFrom => "wasDerivedFrom",
        }
    }

    /// (domain, range) of the relation.
    pub fn signature(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            Relation::WasGeneratedBy => (Entity, Activity),
            Relation::Used => (Activity, Entity),
            Relation::WasAssociatedWith => (Activity, Agent),
            Relation::WasAttributedTo => (Entity, Agent),
            Relation::WasDerivedFrom => (Entity, Entity),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvNode {
    pub id: String,
    pub kind: NodeKind,
    pub labels: BTreeMap<String, String>,
}

/// Field order gives the (subject, relation, object) sort.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProvEdge {
    pub from: String,
    pub relation: Relation,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvGraph {
    pub mapping_version: String,
    pub module: ModuleId,
    /// Sorted by id.
    pub nodes: Vec<ProvNode>,
    /// Sorted by (from, relation, to).
    pub edges: Vec<ProvEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFormat {
    CanonicalJson,
    Triples,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pattern", content = "subject", rename_all = "snake_case")]
pub enum ProvQuery {
    DatasetsUsed(String),
    ActivitiesOf(String),
    Lineage(String),
}

impl ProvGraph {
    pub fn node(&self, id: &str) -> Option<&ProvNode> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    fn targets<'a>(&'a self, from: &'a str, rel: Relation) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == from && e.relation == rel)
            .map(|e| e.to.as_str())
    }

    pub fn serialize(&self, format: GraphFormat) -> Vec<u8> {
        match format {
            GraphFormat::CanonicalJson => to_canonical_json(self).into_bytes(),
            GraphFormat::Triples => self.to_triples().into_bytes(),
        }
    }

    pub fn to_triples(&self) -> String {
        self.edges
            .iter()
            .map(|e| format!("<{}> <{}> <{}>\n", e.from, e.relation.as_str(), e.to))
            .collect()
    }

    /// Entities used by an activity that generated the model, plus entities
    /// the model was derived from.
    pub fn datasets_used(&self, model: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .targets(model, Relation::WasGeneratedBy)
            .flat_map(|a| self.targets(a, Relation::Used))
            .map(str::to_string)
            .collect();
        out.extend(self.targets(model, Relation::WasDerivedFrom).map(str::to_string));
        out
    }

    pub fn activities_of(&self, agent: &str) -> BTreeSet<String> {
        self.edges
            .iter()
            .filter(|e| e.relation == Relation::WasAssociatedWith && e.to == agent)
            .map(|e| e.from.clone())
            .collect()
    }

    /// Transitive wasDerivedFrom closure, excluding the start entity.
    pub fn lineage(&self, entity: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![entity.to_string()];
        while let Some(cur) = stack.pop() {
            for next in self.targets(&cur, Relation::WasDerivedFrom) {
                if seen.insert(next.to_string()) {
                    stack.push(next.to_string());
                }
            }
        }
        seen
    }

    pub fn query(&self, q: &ProvQuery) -> BTreeSet<String> {
        match q {
            ProvQuery::DatasetsUsed(m) => self.datasets_used(m),
            ProvQuery::ActivitiesOf(a) => self.activities_of(a),
            ProvQuery::Lineage(e) => self.lineage(e),
        }
    }

    /// Structural invariant violations: dangling endpoints and relation
    /// domain/range mismatches.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.edges {
            let (dom, rng) = e.relation.signature();
            match (self.node(&e.from), self.node(&e.to)) {
                (Some(f), Some(t)) => {
                    if f.kind != dom || t.kind != rng {
                        out.push(format!(
                            "{} {} {}: expected {dom:?}->{rng:?}, got {:?}->{:?}",
                            e.from,
                            e.relation.as_str(),
                            e.to,
                            f.kind,
                            t.kind
                        ));
                    }
                }
                _ => out.push(format!("dangling edge {} -> {}", e.from, e.to)),
            }
        }
        out
    }
}

#[derive(Default)]
struct Builder {
    nodes: BTreeMap<String, ProvNode>,
    edges: BTreeSet<ProvEdge>,
}

impl Builder {
    fn node(&mut self, id: String, kind: NodeKind) -> &mut ProvNode {
        self.nodes.entry(id.clone()).or_insert_with(|| ProvNode {
            id,
            kind,
            labels: BTreeMap::new(),
        })
    }

    fn edge(&mut self, from: &str, relation: Relation, to: &str) {
        self.edges.insert(ProvEdge {
            from: from.to_string(),
            relation,
            to: to.to_string(),
        });
    }
}

fn label_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => canonical_value(other),
    }
}

pub fn model_node_id(module: &ModuleId) -> String {
    format!("model:{}", encode(module.as_str()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStore {
    fragments: Vec<ProvFragment>,
    ids: IdCounter,
}

impl ProvenanceStore {
    pub fn ingest(
        &mut self,
        module: ModuleId,
        source: FragmentSource,
        payload: Value,
        ts: Millis,
    ) -> Result<FragmentId> {
        validate_payload(source, &payload)?;
        let id = FragmentId::from_seq(self.ids.next_seq());
        self.fragments.push(ProvFragment {
            id: id.clone(),
            module,
            source,
            payload,
            ts,
        });
        Ok(id)
    }

    pub fn fragments(&self) -> &[ProvFragment] {
        &self.fragments
    }

    pub fn fragments_for<'a>(&'a self, module: &'a ModuleId) -> impl Iterator<Item = &'a ProvFragment> + 'a {
        self.fragments.iter().filter(move |f| &f.module == module)
    }

    pub fn count(&self, module: &ModuleId, source: FragmentSource) -> usize {
        self.fragments_for(module).filter(|f| f.source == source).count()
    }

    pub fn build_graph(&self, module: &ModuleId) -> Result<ProvGraph> {
        build_graph(self.fragments_for(module), module, |m| {
            latest_metadata(self.fragments_for(m))
        })
    }
}

/// Latest catalog metadata among fragments, by (ts, canonical payload).
fn latest_metadata<'a>(frags: impl Iterator<Item = &'a ProvFragment>) -> Option<Value> {
    frags
        .filter(|f| f.source == FragmentSource::Catalog)
        .max_by_key(|f| (f.ts, canonical_value(&f.payload)))
        .map(|f| f.payload["metadata"].clone())
}

/// Compile a graph from one module's fragments. `metadata_of` resolves the
/// latest metadata of other modules named as datasets.
pub fn build_graph<'a>(
    fragments: impl Iterator<Item = &'a ProvFragment>,
    module: &ModuleId,
    metadata_of: impl Fn(&ModuleId) -> Option<Value>,
) -> Result<ProvGraph> {
    let mut frags: Vec<&ProvFragment> = fragments.filter(|f| &f.module == module).collect();
    frags.sort_by_cached_key(|f| (f.ts, canonical_value(&f.payload), f.source));
    let metadata = latest_metadata(frags.iter().copied())
        .ok_or_else(|| Error::not_found(format!("no catalog fragment for module {module}")))?;

    let mut b = Builder::default();
    let model = model_node_id(module);
    {
        let node = b.node(model.clone(), NodeKind::Entity);
        for key in ["title", "license", "doi"] {
            if let Some(v) = metadata.get(key).filter(|v| !v.is_null()) {
                node.labels.insert(key.to_string(), label_value(v));
            }
        }
    }
    if let Some(authors) = metadata.get("authors").and_then(Value::as_array) {
        for a in authors {
            let Some(name) = a.get("name").and_then(Value::as_str) else {
                continue;
            };
            let id = format!("agent:author:{}", encode(name));
            let node = b.node(id.clone(), NodeKind::Agent);
            node.labels.insert("name".into(), name.to_string());
            if let Some(aff) = a.get("affiliation").and_then(Value::as_str) {
                node.labels.insert("affiliation".into(), aff.to_string());
            }
            b.edge(&model, Relation::WasAttributedTo, &id);
        }
    }

    let dataset = derive_chain(&mut b, module, &metadata, &metadata_of)?;

    let mut trainings = Vec::new();
    for f in &frags {
        let p = &f.payload;
        match f.source {
            FragmentSource::Catalog => {}
            FragmentSource::Pipeline => {
                let run = label_value(&p["run_id"]);
                let id = format!("build:{}", encode(&run));
                let node = b.node(id.clone(), NodeKind::Activity);
                node.labels.insert("digest".into(), label_value(&p["digest"]));
                node.labels.insert("ts".into(), f.ts.to_string());
                b.edge(&model, Relation::WasGeneratedBy, &id);
            }
            FragmentSource::Training => {
                let job = label_value(&p["job_id"]);
                let id = format!("training:{}", encode(&job));
                let node = b.node(id.clone(), NodeKind::Activity);
                node.labels.insert("provider".into(), label_value(&p["provider"]));
                node.labels.insert("resources".into(), label_value(&p["resources"]));
                b.edge(&model, Relation::WasGeneratedBy, &id);
                if let Some(ds) = &dataset {
                    b.edge(&id, Relation::Used, ds);
                }
                if let Some(owner) = p.get("owner").and_then(Value::as_str) {
                    let agent = format!("agent:user:{}", encode(owner));
                    b.node(agent.clone(), NodeKind::Agent)
                        .labels
                        .insert("name".into(), owner.to_string());
                    b.edge(&id, Relation::WasAssociatedWith, &agent);
                }
                trainings.push((job, id));
            }
            FragmentSource::Tracking => {}
        }
    }
    // Metrics second, so a tracking fragment may precede its training one.
    for f in frags.iter().filter(|f| f.source == FragmentSource::Tracking) {
        let targets: Vec<&String> = match f.payload.get("job_id").filter(|v| !v.is_null()) {
            Some(j) => {
                let j = label_value(j);
                trainings.iter().filter(|(job, _)| *job == j).map(|(_, id)| id).collect()
            }
            None => trainings.iter().map(|(_, id)| id).collect(),
        };
        let metrics = f.payload["metrics"].as_object().expect("validated on ingest");
        for t in targets {
            let node = b.nodes.get_mut(t).expect("training node exists");
            for (k, v) in metrics {
                node.labels.insert(format!("metric:{k}"), label_value(v));
            }
        }
    }

    Ok(ProvGraph {
        mapping_version: MAPPING_VERSION.to_string(),
        module: module.clone(),
        nodes: b.nodes.into_values().collect(),
        edges: b.edges.into_iter().collect(),
    })
}

/// Adds the model's dataset and its derivation chain. Returns the dataset
/// node id the model derives from, if any.
fn derive_chain(
    b: &mut Builder,
    module: &ModuleId,
    metadata: &Value,
    metadata_of: &impl Fn(&ModuleId) -> Option<Value>,
) -> Result<Option<String>> {
    let mut visited = BTreeSet::from([module.clone()]);
    let mut current = model_node_id(module);
    let mut links = metadata.get("links").cloned();
    let mut first = None;
    loop {
        let Some(ds) = links
            .as_ref()
            .and_then(|l| l.get("dataset"))
            .and_then(Value::as_str)
            .map(str::to_string)
        else {
            return Ok(first);
        };
        let (id, next) = match ds.strip_prefix("module:") {
            Some(other) => {
                let other = ModuleId::from(other);
                if !visited.insert(other.clone()) {
                    return Err(Error::validation(format!(
                        "wasDerivedFrom cycle: {current} derives from {} which is already in its lineage",
                        model_node_id(&other)
                    )));
                }
                let md = metadata_of(&other);
                (model_node_id(&other), md.map(|m| m.get("links").cloned()))
            }
            None => (format!("dataset:{}", encode(&ds)), None),
        };
        b.node(id.clone(), NodeKind::Entity)
            .labels
            .insert("uri".into(), ds.clone());
        b.edge(&current, Relation::WasDerivedFrom, &id);
        first.get_or_insert_with(|| id.clone());
        match next {
            Some(l) => {
                links = l;
                current = id;
            }
            None => return Ok(first),
        }
    }
}
