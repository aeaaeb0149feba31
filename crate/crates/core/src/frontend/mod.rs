//! Source-level front end for the supported JavaScript/TypeScript subset.
//!
//! The subset covers function declarations (nested allowed), single
//! declarator `var`/`let`/`const` declarations, assignment, binary and unary
//! expressions, calls, dot-form member access, `if`/`return`/expression/block
//! statements and literals. Anything else is a [`ParseError`], never a silent
//! skip. TypeScript `: Type` annotations are removed by [`strip_annotations`]
//! before parsing and become the type labels.

mod annotations;
mod ast;
mod lexer;
mod parser;

pub use annotations::{annotations_by_node, strip_annotations, AnnotationMap, SpanAnnotations};
pub use ast::{base_tag, load_ast_json, Ast, AstNode, Child, LiteralKind, NodeId, NodeKind, SchemaError};
pub use lexer::{tokenize, LexError, Span, Token, TokenKind, KEYWORDS};
pub use parser::{parse, ParseError};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FrontendError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

pub fn parse_source(source: &str) -> Result<Ast, FrontendError> {
    parse(&tokenize(source)?)
}
