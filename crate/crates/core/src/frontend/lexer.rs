use serde::{Deserialize, Serialize};
use std::fmt;

use super::FrontendError;

/// Half-open byte range `[start, end)` into a source string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn cover(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    StringLit,
    NumberLit,
    BoolLit,
    NullLit,
    RegexLit,
    Keyword,
    Punctuator,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Identifier => "identifier",
            TokenKind::StringLit => "string-lit",
            TokenKind::NumberLit => "number-lit",
            TokenKind::BoolLit => "bool-lit",
            TokenKind::NullLit => "null-lit",
            TokenKind::RegexLit => "regex-lit",
            TokenKind::Keyword => "keyword",
            TokenKind::Punctuator => "punctuator",
        }
    }

    pub fn is_literal(self) -> bool {
        matches!(
            self,
            TokenKind::StringLit
                | TokenKind::NumberLit
                | TokenKind::BoolLit
                | TokenKind::NullLit
                | TokenKind::RegexLit
        )
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuator && self.text == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == k
    }

    /// Feature string used when the token is embedded by kind rather than by
    /// name: literal kinds collapse to their kind, keywords and punctuators
    /// keep their text.
    pub fn feature(&self) -> String {
        match self.kind {
            TokenKind::Keyword | TokenKind::Punctuator => self.text.clone(),
            k => k.as_str().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("lex error at byte {position}: {message}")]
pub struct LexError {
    pub position: usize,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "function", "var", "let", "const", "if", "else", "return", "typeof", "while", "for", "do",
    "break", "continue", "new", "this", "class", "switch", "case", "default", "try", "catch",
    "finally", "throw", "delete", "in", "instanceof", "void", "yield", "async", "await",
    "import", "export", "extends", "super", "with", "debugger", "enum",
];

// Longest first within each leading character.
const PUNCTUATORS: &[&str] = &[
    "===", "!==", "==", "!=", "<=", ">=", "&&", "||", "+=", "-=", "*=", "/=", "%=", "++", "--",
    "=>", "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/", "%", "!", "=",
    ".", ":", "|", "&", "^", "~", "?",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

/// Whether a `/` at this point starts a regular expression rather than a
/// division, judged from the previous significant token.
fn regex_allowed(prev: Option<&Token>) -> bool {
    match prev {
        None => true,
        Some(t) => match t.kind {
            TokenKind::Punctuator => !matches!(t.text.as_str(), ")" | "]" | "}"),
            TokenKind::Keyword => matches!(
                t.text.as_str(),
                "return" | "typeof" | "else" | "in" | "instanceof" | "void" | "delete" | "throw"
            ),
            _ => false,
        },
    }
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, FrontendError> {
    Lexer { src: source, pos: 0, tokens: Vec::new() }.run()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn err(&self, position: usize, message: impl Into<String>) -> FrontendError {
        FrontendError::Lex(LexError { position, message: message.into() })
    }

    fn push(&mut self, kind: TokenKind, start: usize) {
        self.tokens.push(Token {
            kind,
            text: self.src[start..self.pos].to_string(),
            span: Span::new(start, self.pos),
        });
    }

    fn run(mut self) -> Result<Vec<Token>, FrontendError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            if c.is_whitespace() {
                self.bump();
            } else if c == '/' && self.peek_at(1) == Some('/') {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c == '/' && self.peek_at(1) == Some('*') {
                self.pos += 2;
                match self.src[self.pos..].find("*/") {
                    Some(off) => self.pos += off + 2,
                    None => return Err(self.err(start, "unterminated block comment")),
                }
            } else if is_ident_start(c) {
                while self.peek().is_some_and(is_ident_continue) {
                    self.bump();
                }
                let text = &self.src[start..self.pos];
                let kind = match text {
                    "true" | "false" => TokenKind::BoolLit,
                    "null" => TokenKind::NullLit,
                    t if KEYWORDS.contains(&t) => TokenKind::Keyword,
                    _ => TokenKind::Identifier,
                };
                self.push(kind, start);
            } else if c.is_ascii_digit() || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
                self.number(start)?;
            } else if c == '"' || c == '\'' {
                self.string(start, c)?;
            } else if c == '/' && regex_allowed(self.tokens.last()) {
                self.regex(start)?;
            } else {
                let rest = &self.src[self.pos..];
                match PUNCTUATORS.iter().find(|p| rest.starts_with(**p)) {
                    Some(p) => {
                        self.pos += p.len();
                        self.push(TokenKind::Punctuator, start);
                    }
                    None => return Err(self.err(start, format!("illegal character {c:?}"))),
                }
            }
        }
        Ok(self.tokens)
    }

    fn number(&mut self, start: usize) -> Result<(), FrontendError> {
        if self.peek() == Some('0') && matches!(self.peek_at(1), Some('x' | 'X')) {
            self.pos += 2;
            let digits = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_hexdigit()) {
                self.bump();
            }
            if self.pos == digits {
                return Err(self.err(start, "malformed hex literal"));
            }
        } else {
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
            if self.peek() == Some('.') {
                self.bump();
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            }
            if matches!(self.peek(), Some('e' | 'E')) {
                let save = self.pos;
                self.bump();
                if matches!(self.peek(), Some('+' | '-')) {
                    self.bump();
                }
                if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos = save;
                } else {
                    while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.bump();
                    }
                }
            }
        }
        if self.peek().is_some_and(is_ident_start) {
            return Err(self.err(self.pos, "identifier directly after number"));
        }
        self.push(TokenKind::NumberLit, start);
        Ok(())
    }

    fn string(&mut self, start: usize, quote: char) -> Result<(), FrontendError> {
        self.bump();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err(start, "unterminated string literal")),
                Some('\\') => {
                    if self.bump().is_none() {
                        return Err(self.err(start, "unterminated string literal"));
                    }
                }
                Some(c) if c == quote => break,
                Some(_) => {}
            }
        }
        self.push(TokenKind::StringLit, start);
        Ok(())
    }

    fn regex(&mut self, start: usize) -> Result<(), FrontendError> {
        self.bump();
        let mut in_class = false;
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err(start, "unterminated regex literal")),
                Some('\\') => {
                    if self.bump().is_none() {
                        return Err(self.err(start, "unterminated regex literal"));
                    }
                }
                Some('[') => in_class = true,
                Some(']') => in_class = false,
                Some('/') if !in_class => break,
                Some(_) => {}
            }
        }
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            self.bump();
        }
        self.push(TokenKind::RegexLit, start);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn call_declaration() {
        use TokenKind::*;
        let expected = vec![
            (Keyword, "let"),
            (Identifier, "c"),
            (Punctuator, "="),
            (Identifier, "foo"),
            (Punctuator, "("),
            (Identifier, "r"),
            (Punctuator, ")"),
            (Punctuator, ";"),
        ];
        let expected: Vec<_> = expected.into_iter().map(|(k, t)| (k, t.to_string())).collect();
        assert_eq!(kinds("let c = foo(r);"), expected);
    }

    #[test]
    fn string_assignment() {
        use TokenKind::*;
        assert_eq!(
            kinds("x = \"Hello\";"),
            vec![
                (Identifier, "x".to_string()),
                (Punctuator, "=".to_string()),
                (StringLit, "\"Hello\"".to_string()),
                (Punctuator, ";".to_string()),
            ]
        );
    }

    #[test]
    fn regex_versus_division() {
        let toks = kinds("a = b / c; r = /ab+c/gi;");
        assert_eq!(toks[3], (TokenKind::Punctuator, "/".to_string()));
        assert!(toks.contains(&(TokenKind::RegexLit, "/ab+c/gi".to_string())));
    }

    #[test]
    fn literal_kinds_and_comments() {
        let toks = kinds("// hi\nx = true; /* c */ y = null; z = 1.5e3; w = 'q';");
        assert!(toks.contains(&(TokenKind::BoolLit, "true".into())));
        assert!(toks.contains(&(TokenKind::NullLit, "null".into())));
        assert!(toks.contains(&(TokenKind::NumberLit, "1.5e3".into())));
        assert!(toks.contains(&(TokenKind::StringLit, "'q'".into())));
    }

    #[test]
    fn lex_errors_carry_position() {
        match tokenize("x = \"abc") {
            Err(FrontendError::Lex(e)) => assert_eq!(e.position, 4),
            other => panic!("unexpected {other:?}"),
        }
        match tokenize("x = #") {
            Err(FrontendError::Lex(e)) => assert_eq!(e.position, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(tokenize("/* open").is_err());
    }

    #[test]
    fn spans_reconstruct_source() {
        let src = "function f(a) {\n  return a + 1; // tail\n}\n";
        let toks = tokenize(src).unwrap();
        let mut last = 0;
        for t in &toks {
            assert!(t.span.start >= last);
            assert_eq!(&src[t.span.start..t.span.end], t.text);
            // Skipped gaps hold only whitespace and comments.
            let gap = &src[last..t.span.start];
            assert!(gap.trim().is_empty() || gap.trim_start().starts_with("//"));
            last = t.span.end;
        }
    }
}
