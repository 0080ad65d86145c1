//! Composable inference pipelines.
//!
//! Nodes run in Kahn order with ready nodes taken lexicographically, so the
//! execution trace is a deterministic topological order. A node's input is
//! the caller payload if it has no predecessors, the single predecessor's
//! output if it has one, and otherwise the array of predecessor outputs
//! ordered by predecessor name.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::types::{DagId, VoId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DagNodeKind {
    Endpoint,
    Transform,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagNode {
    pub kind: DagNodeKind,
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub nodes: BTreeMap<String, DagNode>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineDag {
    pub id: DagId,
    pub vo: VoId,
    pub nodes: BTreeMap<String, DagNode>,
    pub edges: Vec<(String, String)>,
    /// Validated execution order.
    pub order: Vec<String>,
    pub sink: String,
}

pub type TransformFn = dyn Fn(Value) -> std::result::Result<Value, String> + Send + Sync;

#[derive(Clone, Default)]
pub struct TransformRegistry {
    transforms: BTreeMap<String, Arc<TransformFn>>,
}

impl std::fmt::Debug for TransformRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.transforms.keys()).finish()
    }
}

impl TransformRegistry {
    /// `identity`, `wrap_input` (`{"input": v}`), `extract_echo` (`v.echo`),
    /// and `merge` (array of objects into one object, later keys win).
    pub fn with_defaults() -> Self {
        let mut r = Self::default();
        r.register("identity", Ok).expect("fresh");
        r.register("wrap_input", |v| Ok(serde_json::json!({ "input": v })))
            .expect("fresh");
        r.register("extract_echo", |v: Value| {
            v.get("echo").cloned().ok_or_else(|| "input has no `echo` field".to_string())
        })
        .expect("fresh");
        r.register("merge", |v: Value| {
            let items = v.as_array().ok_or("merge expects an array of objects")?;
            let mut out = Map::new();
            for item in items {
                let obj = item.as_object().ok_or("merge expects an array of objects")?;
                out.extend(obj.clone());
            }
            Ok(Value::Object(out))
        })
        .expect("fresh");
        r
    }

    pub fn register<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: Fn(Value) -> std::result::Result<Value, String> + Send + Sync + 'static,
    {
        if self.transforms.contains_key(name) {
            return Err(Error::Conflict(format!("transform `{name}`")));
        }
        self.transforms.insert(name.to_string(), Arc::new(f));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<TransformFn>> {
        self.transforms.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.transforms.contains_key(name)
    }
}

fn predecessors(spec_edges: &[(String, String)]) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut preds: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (from, to) in spec_edges {
        preds.entry(to.as_str()).or_default().insert(from.as_str());
    }
    preds
}

/// A back edge of some cycle, found by DFS in name order.
fn find_back_edge(nodes: &BTreeMap<String, DagNode>, edges: &[(String, String)]) -> Option<(String, String)> {
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (f, t) in edges {
        succ.entry(f.as_str()).or_default().insert(t.as_str());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color: BTreeMap<&str, u8> = nodes.keys().map(|k| (k.as_str(), 0)).collect();
    fn visit<'a>(
        n: &'a str,
        succ: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        color: &mut BTreeMap<&'a str, u8>,
    ) -> Option<(String, String)> {
        color.insert(n, 1);
        for &m in succ.get(n).into_iter().flatten() {
            match color.get(m).copied().unwrap_or(0) {
                1 => return Some((n.to_string(), m.to_string())),
                0 => {
                    if let Some(e) = visit(m, succ, color) {
                        return Some(e);
                    }
                }
                _ => {}
            }
        }
        color.insert(n, 2);
        None
    }
    let names: Vec<&str> = nodes.keys().map(String::as_str).collect();
    for n in names {
        if color[n] == 0 {
            if let Some(e) = visit(n, &succ, &mut color) {
                return Some(e);
            }
        }
    }
    None
}

/// Structural validation. `endpoint_ok` checks an endpoint reference.
/// Returns the execution order and the sink.
pub fn validate(
    spec: &DagSpec,
    transforms: &TransformRegistry,
    endpoint_ok: impl Fn(&str) -> Result<()>,
) -> Result<(Vec<String>, String)> {
    if spec.nodes.is_empty() {
        return Err(Error::validation("pipeline has no nodes"));
    }
    for (name, node) in &spec.nodes {
        match node.kind {
            DagNodeKind::Transform if !transforms.contains(&node.reference) => {
                return Err(Error::validation(format!(
                    "node `{name}` uses unknown transform `{}`",
                    node.reference
                )))
            }
            DagNodeKind::Endpoint => endpoint_ok(&node.reference).map_err(|e| {
                Error::validation(format!("node `{name}`: {e}"))
            })?,
            _ => {}
        }
    }
    for (from, to) in &spec.edges {
        for end in [from, to] {
            if !spec.nodes.contains_key(end) {
                return Err(Error::validation(format!("edge {from} -> {to} names unknown node `{end}`")));
            }
        }
    }
    let preds = predecessors(&spec.edges);
    let mut out_degree: BTreeMap<&str, usize> = spec.nodes.keys().map(|k| (k.as_str(), 0)).collect();
    let mut succ: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (f, t) in &spec.edges {
        if succ.entry(f.as_str()).or_default().insert(t.as_str()) {
            *out_degree.get_mut(f.as_str()).expect("checked") += 1;
        }
    }
    let mut in_degree: BTreeMap<&str, usize> = spec
        .nodes
        .keys()
        .map(|k| (k.as_str(), preds.get(k.as_str()).map_or(0, BTreeSet::len)))
        .collect();
    let mut ready: BTreeSet<&str> = in_degree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(spec.nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for &m in succ.get(n).into_iter().flatten() {
            let d = in_degree.get_mut(m).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(m);
            }
        }
    }
    if order.len() != spec.nodes.len() {
        let (f, t) = find_back_edge(&spec.nodes, &spec.edges).expect("Kahn stalled so a cycle exists");
        return Err(Error::validation(format!("pipeline has a cycle through back edge {f} -> {t}")));
    }
    let sinks: Vec<&str> = out_degree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    match sinks.as_slice() {
        [one] => Ok((order, one.to_string())),
        many => Err(Error::validation(format!(
            "pipeline must have exactly one sink, found {}: {}",
            many.len(),
            many.join(", ")
        ))),
    }
}

/// Run the DAG. `run_node` executes one node on its input. Returns the sink
/// output and the execution trace.
pub fn execute(
    dag: &PipelineDag,
    payload: Value,
    mut run_node: impl FnMut(&str, &DagNode, Value) -> std::result::Result<Value, String>,
) -> Result<(Value, Vec<String>)> {
    let preds = predecessors(&dag.edges);
    let mut outputs: BTreeMap<&str, Value> = BTreeMap::new();
    let mut trace = Vec::with_capacity(dag.order.len());
    for name in &dag.order {
        let input = match preds.get(name.as_str()) {
            None => payload.clone(),
            Some(p) if p.len() == 1 => outputs[p.first().expect("one")].clone(),
            Some(p) => Value::Array(p.iter().map(|q| outputs[q].clone()).collect()),
        };
        let node = &dag.nodes[name];
        let out = run_node(name, node, input).map_err(|message| Error::PipelineNode {
            node: name.clone(),
            message,
        })?;
        trace.push(name.clone());
        outputs.insert(name.as_str(), out);
    }
    let sink = outputs.remove(dag.sink.as_str()).expect("sink executed");
    Ok((sink, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn t(r: &str) -> DagNode {
        DagNode { kind: DagNodeKind::Transform, reference: r.into() }
    }

    fn spec(nodes: &[(&str, DagNode)], edges: &[(&str, &str)]) -> DagSpec {
        DagSpec {
            nodes: nodes.iter().map(|(n, d)| (n.to_string(), d.clone())).collect(),
            edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    fn dag_of(s: &DagSpec) -> PipelineDag {
        let (order, sink) = validate(s, &TransformRegistry::with_defaults(), |_| Ok(())).unwrap();
        PipelineDag {
            id: DagId::from("dag-000001"),
            vo: "vo".into(),
            nodes: s.nodes.clone(),
            edges: s.edges.clone(),
            order,
            sink,
        }
    }

    fn run_transforms(dag: &PipelineDag, payload: Value) -> Result<(Value, Vec<String>)> {
        let reg = TransformRegistry::with_defaults();
        execute(dag, payload, |_, node, input| (reg.get(&node.reference).unwrap())(input))
    }

    #[test]
    fn chain_composes() {
        let s = spec(&[("a", t("wrap_input")), ("b", t("wrap_input"))], &[("a", "b")]);
        let (out, trace) = run_transforms(&dag_of(&s), json!(1)).unwrap();
        assert_eq!(out, json!({"input": {"input": 1}}));
        assert_eq!(trace, ["a", "b"]);
    }

    #[test]
    fn fan_in_is_ordered_by_predecessor() {
        let s = spec(
            &[("z", t("wrap_input")), ("y", t("identity")), ("m", t("merge"))],
            &[("z", "m"), ("y", "m")],
        );
        let dag = dag_of(&s);
        assert_eq!(dag.order, ["y", "z", "m"]);
        let (out, _) = run_transforms(&dag, json!({"k": 1})).unwrap();
        assert_eq!(out, json!({"k": 1, "input": {"k": 1}}));
    }

    #[test]
    fn cycle_names_back_edge() {
        let s = spec(&[("a", t("identity")), ("b", t("identity")), ("c", t("identity"))],
            &[("a", "b"), ("b", "c"), ("c", "b")]);
        let err = validate(&s, &TransformRegistry::with_defaults(), |_| Ok(())).unwrap_err();
        assert!(err.to_string().contains("c -> b"), "{err}");
    }

    #[test]
    fn structural_errors() {
        let reg = TransformRegistry::with_defaults();
        let two_sinks = spec(&[("a", t("identity")), ("b", t("identity"))], &[]);
        assert!(validate(&two_sinks, &reg, |_| Ok(())).is_err());
        let unknown = spec(&[("a", t("nope"))], &[]);
        assert!(validate(&unknown, &reg, |_| Ok(())).is_err());
        let dangling = spec(&[("a", t("identity"))], &[("a", "ghost")]);
        assert!(validate(&dangling, &reg, |_| Ok(())).is_err());
        let ep = spec(&[("a", DagNode { kind: DagNodeKind::Endpoint, reference: "e".into() })], &[]);
        assert!(validate(&ep, &reg, |_| Err(Error::not_found("e"))).is_err());
    }

    #[test]
    fn node_failure_cites_node() {
        let s = spec(&[("x", t("extract_echo"))], &[]);
        let err = run_transforms(&dag_of(&s), json!(3)).unwrap_err();
        assert!(matches!(err, Error::PipelineNode { ref node, .. } if node == "x"));
    }
}
