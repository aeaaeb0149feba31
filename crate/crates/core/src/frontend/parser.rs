use super::ast::{Ast, AstNode, Child, NodeId, NodeKind};
use super::lexer::{Span, Token, TokenKind};
use super::FrontendError;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("parse error at {span}: expected one of {expected:?}, found {found:?}")]
pub struct ParseError {
    pub span: Span,
    pub expected: Vec<String>,
    pub found: String,
}

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%="];
const UNARY_OPS: &[&str] = &["!", "-", "+", "~"];

// Binary operator tiers, loosest first.
const BINARY_TIERS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["==", "!=", "===", "!=="],
    &["<", ">", "<=", ">="],
    &["+", "-"],
    &["*", "/", "%"],
];

pub fn parse(tokens: &[Token]) -> Result<Ast, FrontendError> {
    let mut p = Parser { tokens, pos: 0, nodes: Vec::new(), fn_depth: 0 };
    let root = p.program()?;
    Ok(Ast { nodes: p.nodes, root })
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    nodes: Vec<AstNode>,
    fn_depth: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_keyword(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(k))
    }

    fn eof_span(&self) -> Span {
        let end = self.tokens.last().map_or(0, |t| t.span.end);
        Span::new(end, end)
    }

    fn error(&self, expected: &[&str]) -> FrontendError {
        let (span, found) = match self.peek() {
            Some(t) => (t.span, t.text.clone()),
            None => (self.eof_span(), "end of input".to_string()),
        };
        FrontendError::Parse(ParseError {
            span,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        })
    }

    fn expect_punct(&mut self, p: &str) -> Result<&'t Token, FrontendError> {
        match self.peek() {
            Some(t) if t.is_punct(p) => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error(&[p])),
        }
    }

    fn expect_ident(&mut self) -> Result<NodeId, FrontendError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(self.leaf(NodeKind::Identifier, Some(t.text.clone()), None, t.span))
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn leaf(&mut self, kind: NodeKind, name: Option<String>, value: Option<String>, span: Span) -> NodeId {
        self.nodes.push(AstNode { kind, name, value, span, children: Vec::new() });
        NodeId(self.nodes.len() - 1)
    }

    fn node(
        &mut self,
        kind: NodeKind,
        name: Option<String>,
        value: Option<String>,
        span: Span,
        children: Vec<(String, NodeId)>,
    ) -> NodeId {
        let children = children.into_iter().map(|(tag, node)| Child { tag, node }).collect();
        self.nodes.push(AstNode { kind, name, value, span, children });
        NodeId(self.nodes.len() - 1)
    }

    fn span_of(&self, id: NodeId) -> Span {
        self.nodes[id.0].span
    }

    fn program(&mut self) -> Result<NodeId, FrontendError> {
        let mut body = Vec::new();
        while self.peek().is_some() {
            let s = self.statement()?;
            body.push((format!("body[{}]", body.len()), s));
        }
        let span = Span::new(0, self.eof_span().end);
        Ok(self.node(NodeKind::Program, None, None, span, body))
    }

    /// Statement terminator: `;`, or nothing before `}` / end of input.
    fn terminator(&mut self) -> Result<usize, FrontendError> {
        match self.peek() {
            Some(t) if t.is_punct(";") => {
                self.pos += 1;
                Ok(t.span.end)
            }
            Some(t) if t.is_punct("}") => Ok(self.tokens[self.pos - 1].span.end),
            None => Ok(self.eof_span().end),
            _ => Err(self.error(&[";"])),
        }
    }

    fn statement(&mut self) -> Result<NodeId, FrontendError> {
        let Some(tok) = self.peek() else {
            return Err(self.error(&["statement"]));
        };
        match tok.kind {
            TokenKind::Keyword => match tok.text.as_str() {
                "function" => self.function_decl(),
                "var" | "let" | "const" => self.var_decl(),
                "if" => self.if_stmt(),
                "return" => self.return_stmt(),
                "typeof" => self.expr_stmt(),
                _ => Err(self.error(&["statement"])),
            },
            TokenKind::Punctuator if tok.text == "{" => self.block(),
            _ => self.expr_stmt(),
        }
    }

    fn function_decl(&mut self) -> Result<NodeId, FrontendError> {
        let start = self.peek().unwrap().span.start;
        self.pos += 1;
        let id = self.expect_ident()?;
        let name = self.nodes[id.0].name.clone();
        let mut children = vec![("id".to_string(), id)];
        self.expect_punct("(")?;
        let mut n = 0;
        if !self.at_punct(")") {
            loop {
                let param = self.expect_ident()?;
                children.push((format!("params[{n}]"), param));
                n += 1;
                if self.at_punct(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        if !self.at_punct("{") {
            return Err(self.error(&["{"]));
        }
        self.fn_depth += 1;
        let body = self.block();
        self.fn_depth -= 1;
        let body = body?;
        let end = self.span_of(body).end;
        children.push(("body".to_string(), body));
        Ok(self.node(NodeKind::FunctionDecl, name, None, Span::new(start, end), children))
    }

    fn var_decl(&mut self) -> Result<NodeId, FrontendError> {
        let kw = self.peek().unwrap();
        self.pos += 1;
        let id = self.expect_ident()?;
        let mut children = vec![("id".to_string(), id)];
        if self.at_punct("=") {
            self.pos += 1;
            let init = self.expression()?;
            children.push(("init".to_string(), init));
        }
        if self.at_punct(",") {
            // One declarator per declaration in the supported subset.
            return Err(self.error(&[";"]));
        }
        let end = self.terminator()?;
        Ok(self.node(NodeKind::VarDecl, None, Some(kw.text.clone()), Span::new(kw.span.start, end), children))
    }

    fn if_stmt(&mut self) -> Result<NodeId, FrontendError> {
        let start = self.peek().unwrap().span.start;
        self.pos += 1;
        self.expect_punct("(")?;
        let cond = self.expression()?;
        self.expect_punct(")")?;
        let cons = self.statement()?;
        let mut children = vec![("condition".to_string(), cond), ("consequent".to_string(), cons)];
        let mut end = self.span_of(cons).end;
        if self.at_keyword("else") {
            self.pos += 1;
            let alt = self.statement()?;
            end = self.span_of(alt).end;
            children.push(("alternate".to_string(), alt));
        }
        Ok(self.node(NodeKind::IfStmt, None, None, Span::new(start, end), children))
    }

    fn return_stmt(&mut self) -> Result<NodeId, FrontendError> {
        if self.fn_depth == 0 {
            return Err(self.error(&["statement (return outside a function)"]));
        }
        let start = self.peek().unwrap().span.start;
        self.pos += 1;
        let mut children = Vec::new();
        if !(self.at_punct(";") || self.at_punct("}") || self.peek().is_none()) {
            let arg = self.expression()?;
            children.push(("argument".to_string(), arg));
        }
        let end = self.terminator()?;
        Ok(self.node(NodeKind::ReturnStmt, None, None, Span::new(start, end), children))
    }

    fn block(&mut self) -> Result<NodeId, FrontendError> {
        let open = self.expect_punct("{")?;
        let mut body = Vec::new();
        while !self.at_punct("}") {
            if self.peek().is_none() {
                return Err(self.error(&["}"]));
            }
            let s = self.statement()?;
            body.push((format!("body[{}]", body.len()), s));
        }
        let close = self.expect_punct("}")?;
        Ok(self.node(NodeKind::BlockStmt, None, None, open.span.cover(close.span), body))
    }

    fn expr_stmt(&mut self) -> Result<NodeId, FrontendError> {
        let expr = self.expression()?;
        let start = self.span_of(expr).start;
        let end = self.terminator()?;
        Ok(self.node(NodeKind::ExprStmt, None, None, Span::new(start, end), vec![("expression".to_string(), expr)]))
    }

    fn expression(&mut self) -> Result<NodeId, FrontendError> {
        let left = self.binary(0)?;
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Punctuator && ASSIGN_OPS.contains(&t.text.as_str()) {
                let kind = self.nodes[left.0].kind;
                if !matches!(kind, NodeKind::Identifier | NodeKind::MemberExpr) {
                    return Err(FrontendError::Parse(ParseError {
                        span: self.span_of(left),
                        expected: vec!["assignable expression".into()],
                        found: kind.to_string(),
                    }));
                }
                self.pos += 1;
                let right = self.expression()?;
                let span = self.span_of(left).cover(self.span_of(right));
                return Ok(self.node(
                    NodeKind::AssignExpr,
                    None,
                    Some(t.text.clone()),
                    span,
                    vec![("left".into(), left), ("right".into(), right)],
                ));
            }
        }
        Ok(left)
    }

    fn binary(&mut self, tier: usize) -> Result<NodeId, FrontendError> {
        if tier == BINARY_TIERS.len() {
            return self.unary();
        }
        let mut left = self.binary(tier + 1)?;
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Punctuator || !BINARY_TIERS[tier].contains(&t.text.as_str()) {
                break;
            }
            self.pos += 1;
            let right = self.binary(tier + 1)?;
            let span = self.span_of(left).cover(self.span_of(right));
            left = self.node(
                NodeKind::BinaryExpr,
                None,
                Some(t.text.clone()),
                span,
                vec![("left".into(), left), ("right".into(), right)],
            );
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<NodeId, FrontendError> {
        if let Some(t) = self.peek() {
            let is_unary = (t.kind == TokenKind::Punctuator && UNARY_OPS.contains(&t.text.as_str()))
                || t.is_keyword("typeof");
            if is_unary {
                self.pos += 1;
                let arg = self.unary()?;
                let span = t.span.cover(self.span_of(arg));
                return Ok(self.node(
                    NodeKind::UnaryExpr,
                    None,
                    Some(t.text.clone()),
                    span,
                    vec![("argument".into(), arg)],
                ));
            }
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<NodeId, FrontendError> {
        let mut expr = self.primary()?;
        loop {
            if self.at_punct(".") {
                self.pos += 1;
                let prop = self.expect_ident()?;
                let span = self.span_of(expr).cover(self.span_of(prop));
                expr = self.node(
                    NodeKind::MemberExpr,
                    None,
                    None,
                    span,
                    vec![("object".into(), expr), ("property".into(), prop)],
                );
            } else if self.at_punct("(") {
                self.pos += 1;
                let mut children = vec![("callee".to_string(), expr)];
                let mut n = 0;
                if !self.at_punct(")") {
                    loop {
                        let arg = self.expression()?;
                        children.push((format!("arguments[{n}]"), arg));
                        n += 1;
                        if self.at_punct(",") {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                let close = self.expect_punct(")")?;
                let span = self.span_of(expr).cover(close.span);
                expr = self.node(NodeKind::CallExpr, None, None, span, children);
            } else if self.at_punct("[") {
                // Computed member access is outside the subset.
                return Err(self.error(&[".", "(", "operator"]));
            } else {
                return Ok(expr);
            }
        }
    }

    fn primary(&mut self) -> Result<NodeId, FrontendError> {
        let Some(t) = self.peek() else {
            return Err(self.error(&["expression"]));
        };
        match t.kind {
            TokenKind::Identifier => self.expect_ident(),
            k if k.is_literal() => {
                self.pos += 1;
                Ok(self.leaf(NodeKind::Literal, None, Some(t.text.clone()), t.span))
            }
            TokenKind::Punctuator if t.text == "(" => {
                self.pos += 1;
                let inner = self.expression()?;
                self.expect_punct(")")?;
                Ok(inner)
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_source, tokenize};
    use super::*;

    #[test]
    fn return_statement() {
        let ast = parse_source("function f(x) { return x; }").unwrap();
        let ret = ast.nodes.iter().position(|n| n.kind == NodeKind::ReturnStmt).unwrap();
        let arg = ast.child(NodeId(ret), "argument").unwrap();
        assert_eq!(ast.node(arg).kind, NodeKind::Identifier);
        assert_eq!(ast.node(arg).name.as_deref(), Some("x"));
    }

    #[test]
    fn top_level_return_is_rejected() {
        assert!(matches!(parse_source("return x;"), Err(FrontendError::Parse(_))));
    }

    #[test]
    fn call_in_declaration() {
        let ast = parse_source("let c = foo(r);").unwrap();
        let root = ast.node(ast.root);
        let decl = root.children[0].node;
        assert_eq!(ast.node(decl).kind, NodeKind::VarDecl);
        assert_eq!(ast.node(decl).value.as_deref(), Some("let"));
        let init = ast.child(decl, "init").unwrap();
        assert_eq!(ast.node(init).kind, NodeKind::CallExpr);
        let callee = ast.child(init, "callee").unwrap();
        assert_eq!(ast.node(callee).name.as_deref(), Some("foo"));
        let arg = ast.child(init, "arguments[0]").unwrap();
        assert_eq!(ast.node(arg).name.as_deref(), Some("r"));
    }

    #[test]
    fn precedence_and_assoc() {
        let ast = parse_source("a = b = 1 + 2 * 3 < 4 && !c;").unwrap();
        let stmt = ast.node(ast.root).children[0].node;
        let outer = ast.child(stmt, "expression").unwrap();
        assert_eq!(ast.node(outer).kind, NodeKind::AssignExpr);
        let inner = ast.child(outer, "right").unwrap();
        assert_eq!(ast.node(inner).kind, NodeKind::AssignExpr);
        let and = ast.child(inner, "right").unwrap();
        assert_eq!(ast.node(and).value.as_deref(), Some("&&"));
        let lt = ast.child(and, "left").unwrap();
        assert_eq!(ast.node(lt).value.as_deref(), Some("<"));
        let plus = ast.child(lt, "left").unwrap();
        assert_eq!(ast.node(plus).value.as_deref(), Some("+"));
        let times = ast.child(plus, "right").unwrap();
        assert_eq!(ast.node(times).value.as_deref(), Some("*"));
    }

    #[test]
    fn outside_subset_is_error() {
        for src in ["a[\"b\"] = 1;", "while (x) {}", "let a = 1, b = 2;", "class A {}", "1 = x;", "f(", "x = ;"] {
            assert!(parse_source(src).is_err(), "{src} should not parse");
        }
    }

    #[test]
    fn parse_error_reports_expected_set() {
        let toks = tokenize("let = 3;").unwrap();
        match parse(&toks) {
            Err(FrontendError::Parse(e)) => {
                assert_eq!(e.expected, vec!["identifier".to_string()]);
                assert_eq!(e.span, Span::new(4, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identifier_nodes_match_identifier_tokens() {
        let src = "function foo(a) {\n  if (a.val) x = \"Hello\";\n  return x;\n}\nr.val = true;\nlet c = foo(r);\n";
        let toks = tokenize(src).unwrap();
        let ast = parse(&toks).unwrap();
        let n_tok = toks.iter().filter(|t| t.kind == TokenKind::Identifier).count();
        assert_eq!(ast.identifier_count(), n_tok);
    }

    #[test]
    fn post_order_storage() {
        let ast = parse_source("if (a) { b(c, 1); } else d = -e;").unwrap();
        for (i, n) in ast.nodes.iter().enumerate() {
            for c in &n.children {
                assert!(c.node.0 < i);
            }
        }
        assert_eq!(ast.root.0, ast.nodes.len() - 1);
    }
}
