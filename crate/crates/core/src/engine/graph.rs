use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nodes::Registry;
use super::ValueKind;
use crate::dsp::BandSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph JSON: {0}")]
    Parse(String),
    #[error("tick_ms must be >= 1")]
    BadTick,
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {0:?}: ids must be non-empty and free of '.'")]
    BadId(String),
    #[error("node {node:?}: unknown kind {kind:?}")]
    UnknownKind { node: String, kind: String },
    #[error("node {node:?}: input refers to missing node {target:?}")]
    DanglingEdge { node: String, target: String },
    #[error("cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("node {node:?}: port {port:?} accepts {expected:?}, upstream emits {found}")]
    PortTypeMismatch {
        node: String,
        port: String,
        expected: Vec<ValueKind>,
        found: ValueKind,
    },
    #[error("node {node:?}: no port {port:?}")]
    UnknownPort { node: String, port: String },
    #[error("node {node:?}: required input {port:?} is not connected")]
    MissingInput { node: String, port: String },
    #[error("node {node:?}: parameter {field:?} {reason}")]
    BadParam {
        node: String,
        field: String,
        reason: String,
    },
}

impl GraphError {
    /// Id of the node the error is about, if any.
    pub fn node(&self) -> Option<&str> {
        match self {
            GraphError::DuplicateId(n) | GraphError::BadId(n) => Some(n),
            GraphError::UnknownKind { node, .. }
            | GraphError::DanglingEdge { node, .. }
            | GraphError::PortTypeMismatch { node, .. }
            | GraphError::UnknownPort { node, .. }
            | GraphError::MissingInput { node, .. }
            | GraphError::BadParam { node, .. } => Some(node),
            GraphError::CycleDetected(nodes) => nodes.first().map(String::as_str),
            GraphError::Parse(_) | GraphError::BadTick => None,
        }
    }
}

/// `node` or `node.port`; the port defaults to `out`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct InputRef {
    pub node: String,
    pub port: String,
}

impl FromStr for InputRef {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.split_once('.') {
            Some((n, p)) => InputRef {
                node: n.to_string(),
                port: p.to_string(),
            },
            None => InputRef {
                node: s.to_string(),
                port: "out".to_string(),
            },
        })
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
    /// Input port name to `node[.port]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl NodeSpec {
    pub fn new(id: &str, kind: &str) -> Self {
        NodeSpec {
            id: id.to_string(),
            kind: kind.to_string(),
            params: serde_json::Map::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn input(mut self, port: &str, source: &str) -> Self {
        self.inputs.insert(port.to_string(), source.to_string());
        self
    }

    pub fn input_refs(&self) -> impl Iterator<Item = (&str, InputRef)> {
        self.inputs
            .iter()
            .map(|(p, s)| (p.as_str(), s.parse::<InputRef>().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    pub tick_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_seconds: Option<f64>,
    /// Band list used by band_power and metric nodes unless they override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandSpec>>,
    /// Electrode names in channel order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<String>>,
}

impl GraphSpec {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes") + "\n"
    }
}

/// Orders nodes so every node follows its inputs; ready nodes are taken in id order.
pub fn topo_order(g: &GraphSpec) -> Result<Vec<String>, GraphError> {
    let ids: BTreeSet<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|&i| (i, 0)).collect();
    let mut downstream: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &g.nodes {
        let ups: BTreeSet<String> = n.input_refs().map(|(_, r)| r.node).collect();
        for up in ups {
            if let Some(&u) = ids.get(up.as_str()) {
                *indegree.get_mut(n.id.as_str()).unwrap() += 1;
                downstream.entry(u).or_default().push(n.id.as_str());
            }
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&i, _)| i)
        .collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        for &d in downstream.get(next).map(Vec::as_slice).unwrap_or(&[]) {
            let e = indegree.get_mut(d).unwrap();
            *e -= 1;
            if *e == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < ids.len() {
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        let stuck = ids.iter().filter(|i| !done.contains(*i)).map(|s| s.to_string()).collect();
        return Err(GraphError::CycleDetected(stuck));
    }
    Ok(order)
}

pub fn load_graph(text: &str) -> Result<GraphSpec, GraphError> {
    load_graph_with(text, &Registry::builtin())
}

pub fn load_graph_with(text: &str, registry: &Registry) -> Result<GraphSpec, GraphError> {
    let g: GraphSpec = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    registry.check(&g)?;
    Ok(g)
}

impl Registry {
    /// Structural validation of a parsed graph against the registered kinds.
    pub fn check(&self, g: &GraphSpec) -> Result<(), GraphError> {
        if g.tick_ms == 0 {
            return Err(GraphError::BadTick);
        }
        let mut seen = BTreeSet::new();
        for n in &g.nodes {
            if n.id.is_empty() || n.id.contains('.') {
                return Err(GraphError::BadId(n.id.clone()));
            }
            if !seen.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateId(n.id.clone()));
            }
        }
        for n in &g.nodes {
            let info = self.info(&n.kind).ok_or_else(|| GraphError::UnknownKind {
                node: n.id.clone(),
                kind: n.kind.clone(),
            })?;
            for field in &info.required_params {
                if !n.params.contains_key(field) {
                    return Err(GraphError::BadParam {
                        node: n.id.clone(),
                        field: field.clone(),
                        reason: "is required".into(),
                    });
                }
            }
            for (port, r) in n.input_refs() {
                let up = g.node(&r.node).ok_or_else(|| GraphError::DanglingEdge {
                    node: n.id.clone(),
                    target: r.node.clone(),
                })?;
                let up_info = self.info(&up.kind).ok_or_else(|| GraphError::UnknownKind {
                    node: up.id.clone(),
                    kind: up.kind.clone(),
                })?;
                let found = up_info
                    .output_kind(&r.port)
                    .ok_or_else(|| GraphError::UnknownPort {
                        node: up.id.clone(),
                        port: r.port.clone(),
                    })?;
                let accepts = info.accepts(port).ok_or_else(|| GraphError::UnknownPort {
                    node: n.id.clone(),
                    port: port.to_string(),
                })?;
                if !accepts.contains(&found) {
                    return Err(GraphError::PortTypeMismatch {
                        node: n.id.clone(),
                        port: port.to_string(),
                        expected: accepts.to_vec(),
                        found,
                    });
                }
            }
            for p in info.inputs.iter().filter(|p| p.required) {
                if !n.inputs.contains_key(&p.name) {
                    return Err(GraphError::MissingInput {
                        node: n.id.clone(),
                        port: p.name.clone(),
                    });
                }
            }
            if info.inputs.is_empty() && info.variadic.is_some() && n.inputs.is_empty() {
                return Err(GraphError::MissingInput {
                    node: n.id.clone(),
                    port: "*".into(),
                });
            }
        }
        topo_order(g)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn consts(ids: &[&str], edges: &[(&str, &str)]) -> GraphSpec {
        let mut nodes: Vec<NodeSpec> = ids
            .iter()
            .map(|id| NodeSpec::new(id, "expr").param("op", "neg"))
            .collect();
        for (from, to) in edges {
            let n = nodes.iter_mut().find(|n| n.id == *to).unwrap();
            let port = if n.inputs.contains_key("a") { "b" } else { "a" };
            n.inputs.insert(port.into(), from.to_string());
        }
        GraphSpec {
            nodes,
            tick_ms: 10,
            run_seconds: None,
            bands: None,
            channels: None,
        }
    }

    #[test]
    fn chain_and_diamond_orders() {
        let g = consts(&["c", "b", "a"], &[("a", "b"), ("b", "c")]);
        assert_eq!(topo_order(&g).unwrap(), ["a", "b", "c"]);
        let g = consts(&["d", "c", "b", "a"], &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]);
        assert_eq!(topo_order(&g).unwrap(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn two_node_cycle() {
        let g = consts(&["a", "b"], &[("a", "b"), ("b", "a")]);
        assert_eq!(
            topo_order(&g),
            Err(GraphError::CycleDetected(vec!["a".into(), "b".into()]))
        );
    }

    #[test]
    fn dangling_edge_names_the_target() {
        let text = r#"{"tick_ms":40,"nodes":[
            {"id":"m","kind":"remap","params":{"low":0,"high":1},"inputs":{"in":"x"}}]}"#;
        assert_eq!(
            load_graph(text),
            Err(GraphError::DanglingEdge {
                node: "m".into(),
                target: "x".into()
            })
        );
    }

    #[test]
    fn distinct_structural_errors() {
        let bad_kind = r#"{"tick_ms":40,"nodes":[{"id":"a","kind":"teleport"}]}"#;
        assert!(matches!(load_graph(bad_kind), Err(GraphError::UnknownKind { .. })));
        let mismatch = r#"{"tick_ms":40,"nodes":[
            {"id":"c","kind":"const","params":{"value":1}},
            {"id":"m","kind":"metric","params":{"metric":"Attention"},"inputs":{"in":"c"}}]}"#;
        match load_graph(mismatch) {
            Err(GraphError::PortTypeMismatch { node, found, .. }) => {
                assert_eq!(node, "m");
                assert_eq!(found, ValueKind::Scalar);
            }
            other => panic!("{other:?}"),
        }
        let cycle = r#"{"tick_ms":40,"nodes":[
            {"id":"a","kind":"expr","params":{"op":"neg"},"inputs":{"a":"b"}},
            {"id":"b","kind":"expr","params":{"op":"neg"},"inputs":{"a":"a"}}]}"#;
        assert!(matches!(load_graph(cycle), Err(GraphError::CycleDetected(_))));
        let missing = r#"{"tick_ms":40,"nodes":[{"id":"r","kind":"remap","params":{"low":0,"high":1}}]}"#;
        assert!(matches!(load_graph(missing), Err(GraphError::MissingInput { .. })));
        let param = r#"{"tick_ms":40,"nodes":[{"id":"c","kind":"const"}]}"#;
        assert!(matches!(load_graph(param), Err(GraphError::BadParam { .. })));
        assert_eq!(load_graph(r#"{"tick_ms":0,"nodes":[]}"#), Err(GraphError::BadTick));
        let dup = r#"{"tick_ms":1,"nodes":[{"id":"c","kind":"const","params":{"value":1}},{"id":"c","kind":"const","params":{"value":1}}]}"#;
        assert_eq!(load_graph(dup), Err(GraphError::DuplicateId("c".into())));
        let port = r#"{"tick_ms":1,"nodes":[{"id":"c","kind":"const","params":{"value":1}},
            {"id":"e","kind":"expr","params":{"op":"neg"},"inputs":{"a":"c.nope"}}]}"#;
        assert!(matches!(load_graph(port), Err(GraphError::UnknownPort { .. })));
    }

    proptest! {
        #[test]
        fn random_dag_order_respects_every_edge(n in 1usize..12, bits in prop::collection::vec(any::<bool>(), 66)) {
            let ids: Vec<String> = (0..n).map(|i| format!("n{:02}", (i * 7) % n)).collect();
            let mut uniq: Vec<String> = ids.clone();
            uniq.sort();
            uniq.dedup();
            let mut edges = Vec::new();
            let mut k = 0;
            for j in 0..uniq.len() {
                let mut fan_in = 0;
                for i in 0..j {
                    if bits[k % bits.len()] && fan_in < 2 {
                        edges.push((uniq[i].clone(), uniq[j].clone()));
                        fan_in += 1;
                    }
                    k += 1;
                }
            }
            let id_refs: Vec<&str> = uniq.iter().map(String::as_str).collect();
            let e_refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let g = consts(&id_refs, &e_refs);
            let order = topo_order(&g).unwrap();
            prop_assert_eq!(order.len(), uniq.len());
            let pos = |id: &str| order.iter().position(|o| o == id).unwrap();
            for (a, b) in &edges {
                prop_assert!(pos(a) < pos(b));
            }
        }
    }
}
