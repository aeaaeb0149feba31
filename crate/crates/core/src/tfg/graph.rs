use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::frontend::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TfgNodeKind {
    IdentNode,
    TokNode,
    ExprNode,
    VarSymNode,
    ObjPropNode,
    CtxNode,
}

impl TfgNodeKind {
    pub const ALL: [TfgNodeKind; 6] = [
        TfgNodeKind::IdentNode,
        TfgNodeKind::TokNode,
        TfgNodeKind::ExprNode,
        TfgNodeKind::VarSymNode,
        TfgNodeKind::ObjPropNode,
        TfgNodeKind::CtxNode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TfgNodeKind::IdentNode => "IdentNode",
            TfgNodeKind::TokNode => "TokNode",
            TfgNodeKind::ExprNode => "ExprNode",
            TfgNodeKind::VarSymNode => "VarSymNode",
            TfgNodeKind::ObjPropNode => "ObjPropNode",
            TfgNodeKind::CtxNode => "CtxNode",
        }
    }

    /// Identifier and expression nodes carry type predictions.
    pub fn is_predictable(self) -> bool {
        matches!(self, TfgNodeKind::IdentNode | TfgNodeKind::ExprNode)
    }

    /// Token and context nodes keep their initial state during propagation.
    pub fn is_frozen(self) -> bool {
        matches!(self, TfgNodeKind::TokNode | TfgNodeKind::CtxNode)
    }
}

impl fmt::Display for TfgNodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TfgNodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TfgNodeKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown TFG node kind {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeType {
    ExpEdge,
    VarSymEdge,
    ObjPropEdge,
    RetEdge,
    CallEdge,
    CtxEdge,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::ExpEdge => "ExpEdge",
            EdgeType::VarSymEdge => "VarSymEdge",
            EdgeType::ObjPropEdge => "ObjPropEdge",
            EdgeType::RetEdge => "RetEdge",
            EdgeType::CallEdge => "CallEdge",
            EdgeType::CtxEdge => "CtxEdge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn code(self) -> char {
        match self {
            Direction::Forward => 'f',
            Direction::Backward => 'b',
        }
    }
}

/// Feature string of an edge: `(expression_type,child_name,dir)` for
/// expression edges, `(edge_type,dir)` for every other family.
pub fn edge_feature(base: &str, dir: Direction) -> String {
    format!("({base},{})", dir.code())
}

/// Split a feature into its direction-free base and direction.
pub fn split_edge_feature(feature: &str) -> Option<(&str, Direction)> {
    let inner = feature.strip_prefix('(')?.strip_suffix(')')?;
    let (base, dir) = inner.rsplit_once(',')?;
    let dir = match dir {
        "f" => Direction::Forward,
        "b" => Direction::Backward,
        _ => return None,
    };
    Some((base, dir))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfgNode {
    pub id: usize,
    pub kind: TfgNodeKind,
    pub feature: String,
    pub ast_ref: Option<NodeId>,
    pub predictable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TfgEdge {
    pub src: usize,
    pub dst: usize,
    pub feature: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tfg {
    pub file_id: String,
    pub nodes: Vec<TfgNode>,
    pub edges: Vec<TfgEdge>,
    pub labels: BTreeMap<usize, String>,
}

impl Tfg {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.src == node || e.dst == node).count()
    }

    /// IdentNode for each AST identifier the graph was built from.
    pub fn ident_nodes_by_ast(&self) -> HashMap<NodeId, usize> {
        self.nodes
            .iter()
            .filter(|n| n.kind == TfgNodeKind::IdentNode)
            .filter_map(|n| n.ast_ref.map(|a| (a, n.id)))
            .collect()
    }

    /// Label IdentNodes through their AST identifiers. Identifiers without
    /// an IdentNode are ignored.
    pub fn set_labels_from_ast(&mut self, labels: &BTreeMap<NodeId, String>) {
        let by_ast = self.ident_nodes_by_ast();
        for (ast_id, ty) in labels {
            if let Some(&n) = by_ast.get(ast_id) {
                self.labels.insert(n, ty.clone());
            }
        }
    }

    /// Drop every edge whose feature fails `keep`, together with its dual so
    /// the pairing invariant survives.
    pub fn retain_edges(&mut self, mut keep: impl FnMut(&str) -> bool) -> usize {
        let before = self.edges.len();
        let bad: std::collections::HashSet<(usize, usize, String)> = self
            .edges
            .iter()
            .filter(|e| !keep(&e.feature))
            .flat_map(|e| {
                let mut v = vec![(e.src, e.dst, e.feature.clone())];
                if let Some((base, dir)) = split_edge_feature(&e.feature) {
                    let flipped = match dir {
                        Direction::Forward => Direction::Backward,
                        Direction::Backward => Direction::Forward,
                    };
                    v.push((e.dst, e.src, edge_feature(base, flipped)));
                }
                v
            })
            .collect();
        self.edges.retain(|e| !bad.contains(&(e.src, e.dst, e.feature.clone())));
        before - self.edges.len()
    }

    /// Renumber nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Tfg {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        for (old, n) in self.nodes.iter().enumerate() {
            let mut n = n.clone();
            n.id = perm[old];
            nodes[perm[old]] = n;
        }
        Tfg {
            file_id: self.file_id.clone(),
            nodes,
            edges: self
                .edges
                .iter()
                .map(|e| TfgEdge { src: perm[e.src], dst: perm[e.dst], feature: e.feature.clone() })
                .collect(),
            labels: self.labels.iter().map(|(k, v)| (perm[*k], v.clone())).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: usize,
    kind: String,
    feature: String,
    predictable: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    src: usize,
    dst: usize,
    feature: String,
}

#[derive(Serialize, Deserialize)]
struct JsonTfg {
    file: String,
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
    labels: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TfgFormatError {
    #[error("malformed TFG JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid TFG: {0}")]
    Invalid(String),
}

impl Tfg {
    pub fn to_json_string(&self) -> String {
        let doc = JsonTfg {
            file: self.file_id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| JsonNode {
                    id: n.id,
                    kind: n.kind.as_str().to_string(),
                    feature: n.feature.clone(),
                    predictable: n.predictable,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| JsonEdge { src: e.src, dst: e.dst, feature: e.feature.clone() })
                .collect(),
            labels: self.labels.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("TFG JSON serialization is infallible")
    }

    /// Parse the TFG JSON format. Node ids must be dense and in order;
    /// AST back-references are not part of the format.
    pub fn from_json_str(s: &str) -> Result<Tfg, TfgFormatError> {
        let doc: JsonTfg = serde_json::from_str(s)?;
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (i, n) in doc.nodes.into_iter().enumerate() {
            if n.id != i {
                return Err(TfgFormatError::Invalid(format!("node {i} has id {}", n.id)));
            }
            let kind = n.kind.parse::<TfgNodeKind>().map_err(TfgFormatError::Invalid)?;
            nodes.push(TfgNode { id: i, kind, feature: n.feature, ast_ref: None, predictable: n.predictable });
        }
        let mut labels = BTreeMap::new();
        for (k, v) in doc.labels {
            let id = k
                .parse::<usize>()
                .map_err(|_| TfgFormatError::Invalid(format!("label key {k:?} is not a node id")))?;
            labels.insert(id, v);
        }
        Ok(Tfg {
            file_id: doc.file,
            nodes,
            edges: doc.edges.into_iter().map(|e| TfgEdge { src: e.src, dst: e.dst, feature: e.feature }).collect(),
            labels,
        })
    }
}
