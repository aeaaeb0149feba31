use std::collections::HashMap;

use crate::frontend::{Ast, NodeId, NodeKind};

/// Identity of a variable symbol: the declaring identifier for bound names,
/// the bare name for free ones (one file-level symbol per free name).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKey {
    Declared(NodeId),
    Free(String),
}

/// Resolve every variable-position identifier (everything except member
/// property names) to its symbol.
///
/// `let`/`const` are block scoped, `var` and function declarations are
/// hoisted to the enclosing function (or the program), parameters live in
/// their function's scope. A re-declaration in the same scope reuses the
/// first binding.
pub fn resolve_variables(ast: &Ast) -> HashMap<NodeId, VarKey> {
    let mut r = Resolver { ast, scopes: Vec::new(), out: HashMap::new() };
    let root = ast.root;
    r.scopes.push(HashMap::new());
    r.hoist_function_scope(root);
    r.hoist_block(root);
    for c in &ast.node(root).children {
        r.stmt(c.node);
    }
    r.out
}

struct Resolver<'a> {
    ast: &'a Ast,
    scopes: Vec<HashMap<String, VarKey>>,
    out: HashMap<NodeId, VarKey>,
}

impl Resolver<'_> {
    fn name(&self, id: NodeId) -> String {
        self.ast.node(id).name.clone().unwrap_or_default()
    }

    fn bind(&mut self, ident: NodeId) {
        let name = self.name(ident);
        self.scopes.last_mut().unwrap().entry(name).or_insert(VarKey::Declared(ident));
    }

    fn lookup(&self, name: &str) -> VarKey {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name).cloned())
            .unwrap_or_else(|| VarKey::Free(name.to_string()))
    }

    /// Bind `var` and function declarations found anywhere in `body`
    /// without descending into nested functions.
    fn hoist_function_scope(&mut self, body: NodeId) {
        let mut stack = vec![body];
        while let Some(id) = stack.pop() {
            let n = self.ast.node(id);
            match n.kind {
                NodeKind::FunctionDecl if id != body => {
                    if let Some(name_id) = self.ast.child(id, "id") {
                        self.bind(name_id);
                    }
                    continue;
                }
                NodeKind::VarDecl if n.value.as_deref() == Some("var") => {
                    if let Some(name_id) = self.ast.child(id, "id") {
                        self.bind(name_id);
                    }
                }
                _ => {}
            }
            if n.kind.is_statement() {
                for c in n.children.iter().rev() {
                    stack.push(c.node);
                }
            }
        }
    }

    /// Bind the `let`/`const` declarations directly inside a block.
    fn hoist_block(&mut self, block: NodeId) {
        for c in &self.ast.node(block).children {
            let n = self.ast.node(c.node);
            if n.kind == NodeKind::VarDecl && n.value.as_deref() != Some("var") {
                if let Some(name_id) = self.ast.child(c.node, "id") {
                    self.bind(name_id);
                }
            }
        }
    }

    fn stmt(&mut self, id: NodeId) {
        let n = self.ast.node(id);
        match n.kind {
            NodeKind::FunctionDecl => {
                if let Some(name_id) = self.ast.child(id, "id") {
                    let key = self.lookup(&self.name(name_id));
                    self.out.insert(name_id, key);
                }
                self.scopes.push(HashMap::new());
                for p in self.ast.children_with_base(id, "params") {
                    self.bind(p);
                    let key = self.lookup(&self.name(p));
                    self.out.insert(p, key);
                }
                if let Some(body) = self.ast.child(id, "body") {
                    // The body block shares the function scope.
                    self.hoist_function_scope(body);
                    self.hoist_block(body);
                    for c in &self.ast.node(body).children {
                        self.stmt(c.node);
                    }
                }
                self.scopes.pop();
            }
            NodeKind::BlockStmt => {
                self.scopes.push(HashMap::new());
                self.hoist_block(id);
                for c in &n.children {
                    self.stmt(c.node);
                }
                self.scopes.pop();
            }
            NodeKind::VarDecl => {
                if let Some(init) = self.ast.child(id, "init") {
                    self.expr(init);
                }
                if let Some(name_id) = self.ast.child(id, "id") {
                    let key = self.lookup(&self.name(name_id));
                    self.out.insert(name_id, key);
                }
            }
            _ if n.kind.is_statement() => {
                for c in &n.children {
                    if self.ast.node(c.node).kind.is_statement() {
                        self.stmt(c.node);
                    } else {
                        self.expr(c.node);
                    }
                }
            }
            _ => self.expr(id),
        }
    }

    fn expr(&mut self, id: NodeId) {
        let n = self.ast.node(id);
        match n.kind {
            NodeKind::Identifier => {
                let key = self.lookup(&self.name(id));
                self.out.insert(id, key);
            }
            NodeKind::MemberExpr => {
                if let Some(obj) = self.ast.child(id, "object") {
                    self.expr(obj);
                }
            }
            _ => {
                for c in &n.children {
                    self.expr(c.node);
                }
            }
        }
    }
}
