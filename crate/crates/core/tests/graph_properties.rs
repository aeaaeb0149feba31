use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use serde_json::Value;

use typeflow::frontend::{load_ast_json, parse, parse_source, strip_annotations, tokenize, Ast, NodeKind, TokenKind};
use typeflow::tfg::{build_tfg, collect_function_decls, resolve_variables, split_edge_feature, Direction, Tfg, TfgNodeKind};

/// A generated statement, rendered with and without type annotations.
#[derive(Clone, Debug)]
enum Stmt {
    Decl(&'static str, usize, Option<&'static str>, Expr),
    Assign(usize, Expr),
    SetProp(usize, usize, Expr),
    If(Expr, Vec<Stmt>),
    Func(usize, Vec<(usize, Option<&'static str>)>, Vec<Stmt>, Expr),
    Call(usize, Vec<Expr>),
}

#[derive(Clone, Debug)]
enum Expr {
    Var(usize),
    Num(u8),
    Str(u8),
    Bool(bool),
    Prop(usize, usize),
    Neg(usize),
    Add(Box<Expr>, Box<Expr>),
    Call(usize, Vec<Expr>),
}

const VARS: [&str; 6] = ["a", "b", "count", "name", "el", "fooBar"];
const PROPS: [&str; 3] = ["x", "length", "body"];
const TYPES: [&str; 5] = ["number", "string", "Array<number>", "HTMLElement", "\"on\"|\"off\""];

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..VARS.len()).prop_map(Expr::Var),
        any::<u8>().prop_map(Expr::Num),
        any::<u8>().prop_map(Expr::Str),
        any::<bool>().prop_map(Expr::Bool),
        (0..VARS.len(), 0..PROPS.len()).prop_map(|(v, p)| Expr::Prop(v, p)),
        (0..VARS.len()).prop_map(Expr::Neg),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (0..VARS.len(), prop::collection::vec(inner, 0..3)).prop_map(|(f, args)| Expr::Call(f, args)),
        ]
    })
}

fn ty() -> impl Strategy<Value = Option<&'static str>> {
    prop::option::of(prop::sample::select(TYPES.to_vec()))
}

fn stmt() -> impl Strategy<Value = Stmt> {
    let simple = prop_oneof![
        (prop::sample::select(vec!["let", "var", "const"]), 0..VARS.len(), ty(), expr())
            .prop_map(|(k, v, t, e)| Stmt::Decl(k, v, t, e)),
        (0..VARS.len(), expr()).prop_map(|(v, e)| Stmt::Assign(v, e)),
        (0..VARS.len(), 0..PROPS.len(), expr()).prop_map(|(v, p, e)| Stmt::SetProp(v, p, e)),
        (0..VARS.len(), prop::collection::vec(expr(), 0..3)).prop_map(|(f, a)| Stmt::Call(f, a)),
    ];
    simple.prop_recursive(2, 16, 4, |inner| {
        prop_oneof![
            (expr(), prop::collection::vec(inner.clone(), 1..3)).prop_map(|(c, b)| Stmt::If(c, b)),
            (0..VARS.len(), prop::collection::vec((0..VARS.len(), ty()), 0..3), prop::collection::vec(inner, 0..3), expr())
                .prop_map(|(f, ps, b, r)| Stmt::Func(f, ps, b, r)),
        ]
    })
}

fn render_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Var(v) => out.push_str(VARS[*v]),
        Expr::Num(n) => out.push_str(&n.to_string()),
        Expr::Str(n) => out.push_str(&format!("\"s{n}\"")),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Prop(v, p) => out.push_str(&format!("{}.{}", VARS[*v], PROPS[*p])),
        Expr::Neg(v) => out.push_str(&format!("-{}", VARS[*v])),
        Expr::Add(a, b) => {
            out.push('(');
            render_expr(a, out);
            out.push_str(" + ");
            render_expr(b, out);
            out.push(')');
        }
        Expr::Call(f, args) => {
            out.push_str(VARS[*f]);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_expr(a, out);
            }
            out.push(')');
        }
    }
}

fn annot(t: &Option<&str>, typed: bool) -> String {
    match t {
        Some(t) if typed => format!(": {t}"),
        _ => String::new(),
    }
}

fn render(stmts: &[Stmt], typed: bool, out: &mut String) {
    for s in stmts {
        match s {
            Stmt::Decl(k, v, t, e) => {
                out.push_str(&format!("{k} {}{} = ", VARS[*v], annot(t, typed)));
                render_expr(e, out);
                out.push_str(";\n");
            }
            Stmt::Assign(v, e) => {
                out.push_str(&format!("{} = ", VARS[*v]));
                render_expr(e, out);
                out.push_str(";\n");
            }
            Stmt::SetProp(v, p, e) => {
                out.push_str(&format!("{}.{} = ", VARS[*v], PROPS[*p]));
                render_expr(e, out);
                out.push_str(";\n");
            }
            Stmt::Call(f, args) => {
                render_expr(&Expr::Call(*f, args.clone()), out);
                out.push_str(";\n");
            }
            Stmt::If(c, body) => {
                out.push_str("if (");
                render_expr(c, out);
                out.push_str(") {\n");
                render(body, typed, out);
                out.push_str("}\n");
            }
            Stmt::Func(f, params, body, ret) => {
                let ps: Vec<String> = params.iter().map(|(p, t)| format!("{}{}", VARS[*p], annot(t, typed))).collect();
                out.push_str(&format!("function {}({}) {{\n", VARS[*f], ps.join(", ")));
                render(body, typed, out);
                out.push_str("return ");
                render_expr(ret, out);
                out.push_str(";\n}\n");
            }
        }
    }
}

fn program() -> impl Strategy<Value = (String, String)> {
    prop::collection::vec(stmt(), 1..8).prop_map(|stmts| {
        let (mut typed, mut plain) = (String::new(), String::new());
        render(&stmts, true, &mut typed);
        render(&stmts, false, &mut plain);
        (typed, plain)
    })
}

fn without_spans(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.iter().filter(|(k, _)| *k != "span").map(|(k, v)| (k.clone(), without_spans(v))).collect()),
        Value::Array(a) => Value::Array(a.iter().map(without_spans).collect()),
        other => other.clone(),
    }
}

fn graph(ast: &Ast) -> Tfg {
    build_tfg(ast, &collect_function_decls(ast), "p.ts").unwrap()
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ast_json_round_trips((typed, _) in program()) {
        let (stripped, _) = strip_annotations(&typed).unwrap();
        let ast = parse_source(&stripped).unwrap();
        prop_assert_eq!(load_ast_json(&ast.to_json_bytes()).unwrap(), ast);
    }

    #[test]
    fn annotations_do_not_change_structure((typed, plain) in program()) {
        let (stripped, spans) = strip_annotations(&typed).unwrap();
        let a = parse_source(&stripped).unwrap();
        let b = parse_source(&plain).unwrap();
        prop_assert_eq!(without_spans(&a.to_json()), without_spans(&b.to_json()));
        prop_assert_eq!(spans.is_empty(), typed == plain);
    }

    #[test]
    fn identifier_nodes_match_identifier_tokens((_, plain) in program()) {
        let tokens = tokenize(&plain).unwrap();
        let ast = parse(&tokens).unwrap();
        let idents = tokens.iter().filter(|t| t.kind == TokenKind::Identifier).count();
        prop_assert_eq!(ast.identifier_count(), idents);
        prop_assert_eq!(ast.nodes.iter().filter(|n| n.kind == NodeKind::Identifier).count(), idents);
    }

    #[test]
    fn every_edge_has_exactly_one_dual((_, plain) in program()) {
        let g = graph(&parse_source(&plain).unwrap());
        prop_assert_eq!(g.edge_count() % 2, 0);
        let mut forward: HashMap<(usize, usize, String), usize> = HashMap::new();
        let mut backward: HashMap<(usize, usize, String), usize> = HashMap::new();
        for e in &g.edges {
            let (base, dir) = split_edge_feature(&e.feature).unwrap();
            match dir {
                Direction::Forward => *forward.entry((e.src, e.dst, base.to_string())).or_default() += 1,
                Direction::Backward => *backward.entry((e.dst, e.src, base.to_string())).or_default() += 1,
            }
        }
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn hub_degrees_count_occurrences((_, plain) in program()) {
        let ast = parse_source(&plain).unwrap();
        let g = graph(&ast);
        let resolved = resolve_variables(&ast);
        let mut per_var: BTreeMap<String, usize> = BTreeMap::new();
        for key in resolved.values() {
            *per_var.entry(format!("{key:?}")).or_default() += 1;
        }
        let mut per_prop: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, n) in ast.nodes.iter().enumerate() {
            if n.kind == NodeKind::Identifier && !resolved.contains_key(&typeflow::frontend::NodeId(i)) {
                *per_prop.entry(n.name.as_deref().unwrap()).or_default() += 1;
            }
        }
        let degrees = |kind| sorted(g.nodes.iter().filter(|n| n.kind == kind).map(|n| g.degree(n.id)).collect());
        prop_assert_eq!(degrees(TfgNodeKind::VarSymNode), sorted(per_var.values().map(|c| 2 * c).collect()));
        prop_assert_eq!(degrees(TfgNodeKind::ObjPropNode), sorted(per_prop.values().map(|c| 2 * c).collect()));
    }

    #[test]
    fn building_is_deterministic((_, plain) in program()) {
        let ast = parse_source(&plain).unwrap();
        prop_assert_eq!(graph(&ast), graph(&ast));
        prop_assert_eq!(graph(&ast), graph(&parse_source(&plain).unwrap()));
    }
}
