use std::collections::{BTreeMap, HashMap};

use super::graph::{edge_feature, Direction, EdgeType, Tfg, TfgEdge, TfgNode, TfgNodeKind};
use super::scope::{resolve_variables, VarKey};
use crate::frontend::{base_tag, Ast, LiteralKind, NodeId, NodeKind};

/// Declaration site of one named function, as AST node ids. Each id maps to
/// exactly one ExprNode in the built graph (the declaration node and the
/// parameter wrapper nodes).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncDecl {
    pub decl: NodeId,
    pub params: Vec<NodeId>,
}

impl FuncDecl {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// Function declarations of one file by name; a later declaration replaces
/// an earlier one with the same name.
pub type FuncDeclTable = BTreeMap<String, FuncDecl>;

pub fn collect_function_decls(ast: &Ast) -> FuncDeclTable {
    let mut table = FuncDeclTable::new();
    // Post-order storage visits nested declarations before their parents;
    // order by source position so "last wins" means last in the text.
    let mut decls: Vec<_> = ast
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::FunctionDecl)
        .collect();
    decls.sort_by_key(|(_, n)| n.span.start);
    for (i, n) in decls {
        let Some(name) = n.name.clone() else { continue };
        let id = NodeId(i);
        table.insert(name, FuncDecl { decl: id, params: ast.children_with_base(id, "params") });
    }
    table
}

#[derive(Debug, thiserror::Error)]
#[error("TFG extraction failed: {0}")]
pub struct ExtractError(pub String);

/// Build the type flow graph of `ast`.
///
/// Nodes are emitted in AST post-order with symbol and property hubs
/// appended afterwards (first-occurrence order); every forward edge is
/// immediately followed by its backward dual.
pub fn build_tfg(ast: &Ast, decls: &FuncDeclTable, file_id: &str) -> Result<Tfg, ExtractError> {
    let mut b = Builder {
        ast,
        vars: resolve_variables(ast),
        nodes: Vec::new(),
        edges: Vec::new(),
        expr_of: HashMap::new(),
        var_uses: Vec::new(),
        prop_uses: Vec::new(),
        calls: Vec::new(),
        returns: HashMap::new(),
        fn_stack: Vec::new(),
    };
    let root = ast.root;
    if ast.node(root).kind != NodeKind::Program {
        return Err(ExtractError(format!("root is {}, not Program", ast.node(root).kind)));
    }
    for c in &ast.node(root).children {
        b.stmt(c.node)?;
    }
    b.finish(decls)?;
    Ok(Tfg { file_id: file_id.to_string(), nodes: b.nodes, edges: b.edges, labels: BTreeMap::new() })
}

struct CallSite {
    node: usize,
    callee: String,
    args: Vec<usize>,
}

struct Builder<'a> {
    ast: &'a Ast,
    vars: HashMap<NodeId, VarKey>,
    nodes: Vec<TfgNode>,
    edges: Vec<TfgEdge>,
    /// ExprNode standing for an AST node (declarations, parameters, wrapped leaves).
    expr_of: HashMap<NodeId, usize>,
    var_uses: Vec<(usize, VarKey)>,
    prop_uses: Vec<(usize, String)>,
    calls: Vec<CallSite>,
    returns: HashMap<NodeId, Vec<usize>>,
    fn_stack: Vec<NodeId>,
}

impl Builder<'_> {
    fn add_node(&mut self, kind: TfgNodeKind, feature: String, ast_ref: Option<NodeId>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TfgNode { id, kind, feature, ast_ref, predictable: kind.is_predictable() });
        id
    }

    fn add_edge_pair(&mut self, src: usize, dst: usize, base: &str) {
        self.edges.push(TfgEdge { src, dst, feature: edge_feature(base, Direction::Forward) });
        self.edges.push(TfgEdge { src: dst, dst: src, feature: edge_feature(base, Direction::Backward) });
    }

    fn exp_edge(&mut self, child: usize, parent: usize, parent_kind: &str, child_tag: &str) {
        self.add_edge_pair(child, parent, &format!("{parent_kind},{}", base_tag(child_tag)));
    }

    fn typed_edge(&mut self, src: usize, dst: usize, ty: EdgeType) {
        self.add_edge_pair(src, dst, ty.as_str());
    }

    fn ctx(&mut self, stmt: NodeKind, tag: &str, expr: usize) {
        let c = self.add_node(TfgNodeKind::CtxNode, format!("({stmt},{})", base_tag(tag)), None);
        self.typed_edge(c, expr, EdgeType::CtxEdge);
    }

    fn ident(&mut self, id: NodeId) -> Result<usize, ExtractError> {
        let name = self.ast.node(id).name.clone().ok_or_else(|| ExtractError("identifier without name".into()))?;
        let n = self.add_node(TfgNodeKind::IdentNode, name, Some(id));
        let key = self
            .vars
            .get(&id)
            .cloned()
            .ok_or_else(|| ExtractError(format!("identifier {id:?} has no resolved symbol")))?;
        self.var_uses.push((n, key));
        Ok(n)
    }

    fn is_expr_node(&self, n: usize) -> bool {
        self.nodes[n].kind == TfgNodeKind::ExprNode
    }

    /// An expression in a position that needs an ExprNode; bare leaves get a
    /// wrapper node named after the leaf kind.
    fn slot(&mut self, id: NodeId) -> Result<usize, ExtractError> {
        let n = self.expr(id)?;
        if self.is_expr_node(n) {
            return Ok(n);
        }
        let kind = self.ast.node(id).kind.as_str();
        let w = self.add_node(TfgNodeKind::ExprNode, kind.to_string(), Some(id));
        self.exp_edge(n, w, kind, "self");
        self.expr_of.insert(id, w);
        Ok(w)
    }

    fn operator(&mut self, id: NodeId) -> Option<usize> {
        let op = self.ast.node(id).value.clone()?;
        Some(self.add_node(TfgNodeKind::TokNode, op, None))
    }

    fn expr(&mut self, id: NodeId) -> Result<usize, ExtractError> {
        let node = self.ast.node(id);
        let kind = node.kind;
        let kind_str = kind.as_str();
        match kind {
            NodeKind::Identifier => self.ident(id),
            NodeKind::Literal => {
                let raw = node.value.as_deref().unwrap_or_default();
                Ok(self.add_node(TfgNodeKind::TokNode, LiteralKind::of(raw).token_type().to_string(), Some(id)))
            }
            NodeKind::MemberExpr => {
                let obj = self.ast.child(id, "object").ok_or_else(|| missing(id, "object"))?;
                let prop = self.ast.child(id, "property").ok_or_else(|| missing(id, "property"))?;
                let o = self.expr(obj)?;
                let name = self.ast.node(prop).name.clone().ok_or_else(|| missing(prop, "name"))?;
                let p = self.add_node(TfgNodeKind::IdentNode, name.clone(), Some(prop));
                self.prop_uses.push((p, name));
                let e = self.add_node(TfgNodeKind::ExprNode, kind_str.into(), Some(id));
                self.exp_edge(o, e, kind_str, "object");
                self.exp_edge(p, e, kind_str, "property");
                Ok(e)
            }
            NodeKind::CallExpr => {
                let mut parts = Vec::new();
                let mut args = Vec::new();
                let mut callee_name = None;
                for c in &node.children {
                    if c.base_tag() == "arguments" {
                        let a = self.slot(c.node)?;
                        args.push(a);
                        parts.push((a, c.tag.clone()));
                    } else {
                        let cn = self.ast.node(c.node);
                        if cn.kind == NodeKind::Identifier {
                            callee_name = cn.name.clone();
                        }
                        let n = self.expr(c.node)?;
                        parts.push((n, c.tag.clone()));
                    }
                }
                let e = self.add_node(TfgNodeKind::ExprNode, kind_str.into(), Some(id));
                for (n, tag) in parts {
                    self.exp_edge(n, e, kind_str, &tag);
                }
                if let Some(callee) = callee_name {
                    self.calls.push(CallSite { node: e, callee, args });
                }
                Ok(e)
            }
            NodeKind::BinaryExpr | NodeKind::AssignExpr | NodeKind::UnaryExpr => {
                let mut parts = Vec::new();
                let children = node.children.clone();
                let mut op_done = false;
                for c in &children {
                    if c.tag == "right" || (c.tag == "argument" && !op_done) {
                        // operator token sits between the operands
                        if let Some(t) = self.operator(id) {
                            parts.push((t, "operator".to_string()));
                        }
                        op_done = true;
                    }
                    let n = self.expr(c.node)?;
                    parts.push((n, c.tag.clone()));
                }
                if !op_done {
                    if let Some(t) = self.operator(id) {
                        parts.push((t, "operator".to_string()));
                    }
                }
                let e = self.add_node(TfgNodeKind::ExprNode, kind_str.into(), Some(id));
                for (n, tag) in parts {
                    self.exp_edge(n, e, kind_str, &tag);
                }
                Ok(e)
            }
            k => Err(ExtractError(format!("statement {k} in expression position"))),
        }
    }

    fn stmt(&mut self, id: NodeId) -> Result<(), ExtractError> {
        let node = self.ast.node(id);
        let kind = node.kind;
        let kind_str = kind.as_str();
        match kind {
            NodeKind::BlockStmt | NodeKind::Program => {
                for c in &node.children {
                    self.stmt(c.node)?;
                }
            }
            NodeKind::FunctionDecl => {
                let mut parts = Vec::new();
                for c in &node.children {
                    match c.base_tag() {
                        "id" => {
                            let n = self.ident(c.node)?;
                            parts.push((n, c.tag.clone()));
                        }
                        "params" => {
                            let p = self.ident(c.node)?;
                            let w = self.add_node(TfgNodeKind::ExprNode, "Parameter".into(), Some(c.node));
                            self.exp_edge(p, w, "Parameter", "self");
                            self.expr_of.insert(c.node, w);
                            self.ctx(kind, &c.tag, w);
                            parts.push((w, c.tag.clone()));
                        }
                        "body" => {
                            self.fn_stack.push(id);
                            let r = self.stmt(c.node);
                            self.fn_stack.pop();
                            r?;
                        }
                        other => return Err(ExtractError(format!("unexpected FunctionDecl child {other}"))),
                    }
                }
                let e = self.add_node(TfgNodeKind::ExprNode, kind_str.into(), Some(id));
                self.expr_of.insert(id, e);
                for (n, tag) in parts {
                    self.exp_edge(n, e, kind_str, &tag);
                }
                for r in self.returns.get(&id).cloned().unwrap_or_default() {
                    self.typed_edge(r, e, EdgeType::RetEdge);
                }
            }
            NodeKind::VarDecl => {
                let mut parts = Vec::new();
                for c in &node.children {
                    if c.tag == "id" {
                        let n = self.ident(c.node)?;
                        parts.push((n, c.tag.clone()));
                    } else {
                        let n = self.slot(c.node)?;
                        self.ctx(kind, &c.tag, n);
                        parts.push((n, c.tag.clone()));
                    }
                }
                let e = self.add_node(TfgNodeKind::ExprNode, kind_str.into(), Some(id));
                self.expr_of.insert(id, e);
                for (n, tag) in parts {
                    self.exp_edge(n, e, kind_str, &tag);
                }
            }
            NodeKind::IfStmt | NodeKind::ReturnStmt | NodeKind::ExprStmt => {
                for c in &node.children {
                    if self.ast.node(c.node).kind.is_statement() {
                        self.stmt(c.node)?;
                        continue;
                    }
                    let n = self.slot(c.node)?;
                    self.ctx(kind, &c.tag, n);
                    if kind == NodeKind::ReturnStmt {
                        let f = *self.fn_stack.last().ok_or_else(|| ExtractError("return outside function".into()))?;
                        self.returns.entry(f).or_default().push(n);
                    }
                }
            }
            k => return Err(ExtractError(format!("expression {k} in statement position"))),
        }
        Ok(())
    }

    fn finish(&mut self, decls: &FuncDeclTable) -> Result<(), ExtractError> {
        // Call edges: returned expressions flow to call sites, arguments to
        // parameters, matched by callee name.
        let calls = std::mem::take(&mut self.calls);
        for call in &calls {
            let Some(decl) = decls.get(&call.callee) else { continue };
            for r in self.returns.get(&decl.decl).cloned().unwrap_or_default() {
                self.typed_edge(r, call.node, EdgeType::CallEdge);
            }
            for (arg, param) in call.args.iter().zip(&decl.params) {
                let p = *self
                    .expr_of
                    .get(param)
                    .ok_or_else(|| ExtractError(format!("parameter {param:?} has no ExprNode")))?;
                self.typed_edge(*arg, p, EdgeType::CallEdge);
            }
        }

        let var_uses = std::mem::take(&mut self.var_uses);
        let mut hubs: HashMap<VarKey, usize> = HashMap::new();
        for (ident, key) in &var_uses {
            let hub = match hubs.get(key) {
                Some(&h) => h,
                None => {
                    let ast_ref = match key {
                        VarKey::Declared(id) => Some(*id),
                        VarKey::Free(_) => None,
                    };
                    let h = self.add_node(TfgNodeKind::VarSymNode, "VarSymNode".into(), ast_ref);
                    hubs.insert(key.clone(), h);
                    h
                }
            };
            self.typed_edge(*ident, hub, EdgeType::VarSymEdge);
        }

        let prop_uses = std::mem::take(&mut self.prop_uses);
        let mut props: HashMap<String, usize> = HashMap::new();
        for (ident, name) in &prop_uses {
            let hub = match props.get(name) {
                Some(&h) => h,
                None => {
                    let h = self.add_node(TfgNodeKind::ObjPropNode, "ObjPropNode".into(), None);
                    props.insert(name.clone(), h);
                    h
                }
            };
            self.typed_edge(*ident, hub, EdgeType::ObjPropEdge);
        }
        Ok(())
    }
}

fn missing(id: NodeId, what: &str) -> ExtractError {
    ExtractError(format!("node {id:?} is missing {what}"))
}
