use std::collections::BTreeMap;

use super::ast::{Ast, NodeId, NodeKind};
use super::lexer::{tokenize, Span, Token, TokenKind};
use super::parser::ParseError;
use super::FrontendError;

/// Raw annotation strings keyed by the annotated identifier's span in the
/// stripped source.
pub type SpanAnnotations = BTreeMap<Span, String>;

/// Raw annotation strings keyed by `Identifier` node.
pub type AnnotationMap = BTreeMap<NodeId, String>;

/// Remove `: Type` annotations from declarations, parameters and function
/// return positions.
///
/// Accepted annotation forms: `Name`, `Name<T, ...>`, `T[]`, literal types
/// and `|` unions of those. A return annotation is keyed to the function's
/// name identifier.
pub fn strip_annotations(source: &str) -> Result<(String, SpanAnnotations), FrontendError> {
    let tokens = tokenize(source)?;
    let param_close = function_param_closers(&tokens);

    let mut out = String::with_capacity(source.len());
    let mut targets = Vec::new();
    let mut removed: Vec<(usize, usize)> = Vec::new();
    let mut copied = 0;
    let mut i = 0;
    while i < tokens.len() {
        if !tokens[i].is_punct(":") {
            i += 1;
            continue;
        }
        let target = if i > 0 && tokens[i - 1].kind == TokenKind::Identifier {
            i - 1
        } else if let Some(&name) = (i > 0).then(|| param_close.get(&(i - 1))).flatten() {
            name
        } else {
            return Err(unexpected(&tokens[i], "annotation target"));
        };
        let end = parse_type(&tokens, i + 1)?;
        let colon = tokens[i].span.start;
        let type_start = tokens[i + 1].span.start;
        let type_end = tokens[end - 1].span.end;
        let raw = source[type_start..type_end].to_string();

        out.push_str(&source[copied..colon]);
        targets.push((tokens[target].span, raw));
        removed.push((colon, type_end));
        copied = type_end;
        i = end;
    }
    out.push_str(&source[copied..]);
    let shift = |pos: usize| -> usize {
        pos - removed.iter().filter(|(_, e)| *e <= pos).map(|(s, e)| e - s).sum::<usize>()
    };
    let annotations = targets
        .into_iter()
        .map(|(t, raw)| (Span::new(shift(t.start), shift(t.end)), raw))
        .collect();
    Ok((out, annotations))
}

fn unexpected(tok: &Token, what: &str) -> FrontendError {
    FrontendError::Parse(ParseError { span: tok.span, expected: vec![what.to_string()], found: tok.text.clone() })
}

/// Map from the index of each `)` closing a function's parameter list to the
/// index of the function's name token.
fn function_param_closers(tokens: &[Token]) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for i in 0..tokens.len() {
        if !tokens[i].is_keyword("function") {
            continue;
        }
        let (Some(name), Some(open)) = (tokens.get(i + 1), tokens.get(i + 2)) else {
            continue;
        };
        if name.kind != TokenKind::Identifier || !open.is_punct("(") {
            continue;
        }
        let mut depth = 0usize;
        for (j, t) in tokens.iter().enumerate().skip(i + 2) {
            if t.is_punct("(") {
                depth += 1;
            } else if t.is_punct(")") {
                depth -= 1;
                if depth == 0 {
                    map.insert(j, i + 1);
                    break;
                }
            }
        }
    }
    map
}

/// Parse one annotation type starting at `start`; returns the index just past it.
fn parse_type(tokens: &[Token], start: usize) -> Result<usize, FrontendError> {
    let mut i = parse_primary_type(tokens, start)?;
    while tokens.get(i).is_some_and(|t| t.is_punct("|")) {
        i = parse_primary_type(tokens, i + 1)?;
    }
    Ok(i)
}

fn parse_primary_type(tokens: &[Token], start: usize) -> Result<usize, FrontendError> {
    let Some(tok) = tokens.get(start) else {
        let end = tokens.last().map_or(0, |t| t.span.end);
        return Err(FrontendError::Parse(ParseError {
            span: Span::new(end, end),
            expected: vec!["type".into()],
            found: "end of input".into(),
        }));
    };
    let mut i = start + 1;
    match tok.kind {
        TokenKind::Identifier => {
            if tokens.get(i).is_some_and(|t| t.is_punct("<")) {
                i = parse_type(tokens, i + 1)?;
                while tokens.get(i).is_some_and(|t| t.is_punct(",")) {
                    i = parse_type(tokens, i + 1)?;
                }
                match tokens.get(i) {
                    Some(t) if t.is_punct(">") => i += 1,
                    Some(t) => return Err(unexpected(t, ">")),
                    None => return Err(unexpected(tok, ">")),
                }
            }
        }
        TokenKind::Keyword if tok.text == "void" => {}
        k if k.is_literal() => {}
        _ => return Err(unexpected(tok, "type")),
    }
    while tokens.get(i).is_some_and(|t| t.is_punct("[")) && tokens.get(i + 1).is_some_and(|t| t.is_punct("]")) {
        i += 2;
    }
    Ok(i)
}

/// Re-key span annotations onto the `Identifier` nodes at those spans.
/// Spans that match no identifier are ignored.
pub fn annotations_by_node(ast: &Ast, spans: &SpanAnnotations) -> AnnotationMap {
    ast.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::Identifier)
        .filter_map(|(i, n)| spans.get(&n.span).map(|raw| (NodeId(i), raw.clone())))
        .collect()
}
