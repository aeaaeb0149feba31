use serde_json::{json, Map, Value};
use std::fmt;
use std::str::FromStr;

use super::lexer::Span;
use super::FrontendError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Program,
    FunctionDecl,
    VarDecl,
    IfStmt,
    ReturnStmt,
    ExprStmt,
    BlockStmt,
    AssignExpr,
    BinaryExpr,
    UnaryExpr,
    CallExpr,
    MemberExpr,
    Identifier,
    Literal,
}

impl NodeKind {
    pub const ALL: [NodeKind; 14] = [
        NodeKind::Program,
        NodeKind::FunctionDecl,
        NodeKind::VarDecl,
        NodeKind::IfStmt,
        NodeKind::ReturnStmt,
        NodeKind::ExprStmt,
        NodeKind::BlockStmt,
        NodeKind::AssignExpr,
        NodeKind::BinaryExpr,
        NodeKind::UnaryExpr,
        NodeKind::CallExpr,
        NodeKind::MemberExpr,
        NodeKind::Identifier,
        NodeKind::Literal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Program => "Program",
            NodeKind::FunctionDecl => "FunctionDecl",
            NodeKind::VarDecl => "VarDecl",
            NodeKind::IfStmt => "IfStmt",
            NodeKind::ReturnStmt => "ReturnStmt",
            NodeKind::ExprStmt => "ExprStmt",
            NodeKind::BlockStmt => "BlockStmt",
            NodeKind::AssignExpr => "AssignExpr",
            NodeKind::BinaryExpr => "BinaryExpr",
            NodeKind::UnaryExpr => "UnaryExpr",
            NodeKind::CallExpr => "CallExpr",
            NodeKind::MemberExpr => "MemberExpr",
            NodeKind::Identifier => "Identifier",
            NodeKind::Literal => "Literal",
        }
    }

    pub fn is_statement(self) -> bool {
        matches!(
            self,
            NodeKind::Program
                | NodeKind::FunctionDecl
                | NodeKind::VarDecl
                | NodeKind::IfStmt
                | NodeKind::ReturnStmt
                | NodeKind::ExprStmt
                | NodeKind::BlockStmt
        )
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Identifier | NodeKind::Literal)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        NodeKind::ALL.iter().copied().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Child {
    pub tag: String,
    pub node: NodeId,
}

impl Child {
    /// Tag with any `[i]` index suffix removed.
    pub fn base_tag(&self) -> &str {
        base_tag(&self.tag)
    }
}

pub fn base_tag(tag: &str) -> &str {
    tag.split('[').next().unwrap_or(tag)
}

/// One syntax node. `name` carries identifier and function names; `value`
/// carries literal text, operators and declaration keywords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AstNode {
    pub kind: NodeKind,
    pub name: Option<String>,
    pub value: Option<String>,
    pub span: Span,
    pub children: Vec<Child>,
}

/// Arena-backed syntax tree. Nodes are stored in post-order, so every child
/// precedes its parent and the root is last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
    pub root: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiteralKind {
    String,
    Number,
    Bool,
    Null,
    Regex,
}

impl LiteralKind {
    pub fn of(raw: &str) -> LiteralKind {
        match raw.chars().next() {
            Some('"' | '\'') => LiteralKind::String,
            Some('/') => LiteralKind::Regex,
            _ if raw == "true" || raw == "false" => LiteralKind::Bool,
            _ if raw == "null" => LiteralKind::Null,
            _ => LiteralKind::Number,
        }
    }

    /// Token-type feature of the literal, shared with the lexer's kind names.
    pub fn token_type(self) -> &'static str {
        match self {
            LiteralKind::String => "string-lit",
            LiteralKind::Number => "number-lit",
            LiteralKind::Bool => "bool-lit",
            LiteralKind::Null => "null-lit",
            LiteralKind::Regex => "regex-lit",
        }
    }
}

impl Ast {
    pub fn node(&self, id: NodeId) -> &AstNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn child(&self, id: NodeId, tag: &str) -> Option<NodeId> {
        self.node(id).children.iter().find(|c| c.tag == tag).map(|c| c.node)
    }

    pub fn children_with_base(&self, id: NodeId, base: &str) -> Vec<NodeId> {
        self.node(id)
            .children
            .iter()
            .filter(|c| c.base_tag() == base)
            .map(|c| c.node)
            .collect()
    }

    pub fn identifier_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Identifier).count()
    }

    /// Parent of every node, `None` for the root.
    pub fn parents(&self) -> Vec<Option<(NodeId, usize)>> {
        let mut parents = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for (ci, c) in n.children.iter().enumerate() {
                parents[c.node.0] = Some((NodeId(i), ci));
            }
        }
        parents
    }

    pub fn to_json(&self) -> Value {
        self.node_json(self.root)
    }

    fn node_json(&self, id: NodeId) -> Value {
        let n = self.node(id);
        let mut obj = Map::new();
        obj.insert("kind".into(), json!(n.kind.as_str()));
        if let Some(name) = &n.name {
            obj.insert("name".into(), json!(name));
        }
        if let Some(value) = &n.value {
            obj.insert("value".into(), json!(value));
        }
        obj.insert("span".into(), json!([n.span.start, n.span.end]));
        let children: Vec<Value> = n
            .children
            .iter()
            .map(|c| json!({"tag": c.tag, "node": self.node_json(c.node)}))
            .collect();
        obj.insert("children".into(), Value::Array(children));
        Value::Object(obj)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_json()).expect("AST JSON serialization is infallible")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("schema error at {path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

/// Load an AST from the JSON interchange schema:
/// `{"kind", "name"?, "value"?, "span": [start, end], "children": [{"tag", "node"}]}`.
/// A missing span defaults to `[0, 0]`, a missing child list to empty.
pub fn load_ast_json(bytes: &[u8]) -> Result<Ast, FrontendError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| {
        FrontendError::Schema(SchemaError { path: "$".into(), message: e.to_string() })
    })?;
    let mut nodes = Vec::new();
    let root = load_node(&value, "$", &mut nodes).map_err(FrontendError::Schema)?;
    Ok(Ast { nodes, root })
}

fn schema(path: &str, message: impl Into<String>) -> SchemaError {
    SchemaError { path: path.to_string(), message: message.into() }
}

fn opt_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<String>, SchemaError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(schema(&format!("{path}.{key}"), "expected string")),
    }
}

fn load_node(v: &Value, path: &str, nodes: &mut Vec<AstNode>) -> Result<NodeId, SchemaError> {
    let obj = v.as_object().ok_or_else(|| schema(path, "expected object"))?;
    let kind_path = format!("{path}.kind");
    let kind = match obj.get("kind") {
        Some(Value::String(s)) => s
            .parse::<NodeKind>()
            .map_err(|_| schema(&kind_path, format!("unknown node kind {s:?}")))?,
        Some(_) => return Err(schema(&kind_path, "expected string")),
        None => return Err(schema(&kind_path, "missing")),
    };
    let name = opt_string(obj, "name", path)?;
    let value = opt_string(obj, "value", path)?;
    let span = match obj.get("span") {
        None => Span::default(),
        Some(Value::Array(a)) if a.len() == 2 => {
            let get = |i: usize| {
                a[i].as_u64()
                    .map(|x| x as usize)
                    .ok_or_else(|| schema(&format!("{path}.span[{i}]"), "expected non-negative integer"))
            };
            let (s, e) = (get(0)?, get(1)?);
            if s > e {
                return Err(schema(&format!("{path}.span"), "start exceeds end"));
            }
            Span::new(s, e)
        }
        Some(_) => return Err(schema(&format!("{path}.span"), "expected [start, end]")),
    };
    let mut children = Vec::new();
    match obj.get("children") {
        None => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let cpath = format!("{path}.children[{i}]");
                let cobj = item.as_object().ok_or_else(|| schema(&cpath, "expected object"))?;
                let tag = match cobj.get("tag") {
                    Some(Value::String(t)) => t.clone(),
                    _ => return Err(schema(&format!("{cpath}.tag"), "expected string")),
                };
                let node_v = cobj.get("node").ok_or_else(|| schema(&format!("{cpath}.node"), "missing"))?;
                let node = load_node(node_v, &format!("{cpath}.node"), nodes)?;
                children.push(Child { tag, node });
            }
        }
        Some(_) => return Err(schema(&format!("{path}.children"), "expected array")),
    }
    if kind.is_leaf() && !children.is_empty() {
        return Err(schema(&format!("{path}.children"), format!("{kind} must be a leaf")));
    }
    if kind == NodeKind::Identifier && name.as_deref().is_none_or(str::is_empty) {
        return Err(schema(&format!("{path}.name"), "identifier needs a non-empty name"));
    }
    if kind == NodeKind::Literal && value.is_none() {
        return Err(schema(&format!("{path}.value"), "literal needs a value"));
    }
    for (i, a) in children.iter().enumerate() {
        let dup = children[..i].iter().any(|b| b.tag == a.tag);
        if dup {
            return Err(schema(&format!("{path}.children[{i}].tag"), format!("duplicate tag {:?}", a.tag)));
        }
    }
    nodes.push(AstNode { kind, name, value, span, children });
    Ok(NodeId(nodes.len() - 1))
}
