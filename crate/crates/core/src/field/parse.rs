//! Recursive-descent parser.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' '-'? INTEGER)?
//! atom  := NUMBER | VARIABLE | FUNC '(' expr ')' | '(' expr ')'
//! ```

use std::sync::Arc;

use thiserror::Error;

use super::node::{build, Func, Node, Var};
use super::MAX_DIM;

/// Byte range into the parsed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub byte_start: usize,
    pub byte_end: usize,
}

impl SourceSpan {
    fn new(byte_start: usize, byte_end: usize) -> Self {
        debug_assert!(byte_start <= byte_end);
        Self {
            byte_start,
            byte_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at bytes {}..{}: {message}", span.byte_start, span.byte_end)]
    Syntax { span: SourceSpan, message: String },
    #[error("unknown variable `{name}` at bytes {}..{}", span.byte_start, span.byte_end)]
    UnknownVariable { span: SourceSpan, name: String },
    #[error("dimension {0} not supported (expected 1..={MAX_DIM})")]
    InvalidDimension(usize),
}

impl ParseError {
    pub fn span(&self) -> Option<SourceSpan> {
        match self {
            ParseError::Syntax { span, .. } | ParseError::UnknownVariable { span, .. } => {
                Some(*span)
            }
            ParseError::InvalidDimension(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: SourceSpan,
    text: String,
}

fn syntax(span: SourceSpan, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        span,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value = text
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| syntax(SourceSpan::new(start, i), "malformed number"))?;
                out.push(Token {
                    tok: Tok::Number(value),
                    span: SourceSpan::new(start, i),
                    text: text.to_string(),
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let text = &src[start..i];
                out.push(Token {
                    tok: Tok::Ident(text.to_string()),
                    span: SourceSpan::new(start, i),
                    text: text.to_string(),
                });
                continue;
            }
            _ => {
                let len = src[start..].chars().next().map_or(1, char::len_utf8);
                return Err(syntax(
                    SourceSpan::new(start, start + len),
                    format!("unexpected character `{}`", &src[start..start + len]),
                ));
            }
        };
        i += 1;
        out.push(Token {
            tok,
            span: SourceSpan::new(start, i),
            text: src[start..i].to_string(),
        });
    }
    out.push(Token {
        tok: Tok::End,
        span: SourceSpan::new(src.len(), src.len()),
        text: String::new(),
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.bump();
        if t.tok == tok {
            Ok(t)
        } else {
            Err(unexpected(&t, what))
        }
    }

    fn expr(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = build::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = build::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = build::mul(lhs, self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = build::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Arc<Node>, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(build::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Arc<Node>, ParseError> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let t = self.bump();
        let exponent = match t.tok {
            Tok::Number(_) if t.text.bytes().all(|b| b.is_ascii_digit()) => t
                .text
                .parse::<i32>()
                .map_err(|_| syntax(t.span, "exponent out of range"))?,
            _ => return Err(syntax(t.span, "exponent must be an integer literal")),
        };
        Ok(build::pow(base, if negative { -exponent } else { exponent }))
    }

    fn atom(&mut self) -> Result<Arc<Node>, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Number(v) => Ok(build::constant(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(ref name) => {
                if self.peek().tok == Tok::LParen {
                    let func = Func::from_name(name)
                        .ok_or_else(|| syntax(t.span, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(build::call(func, arg));
                }
                let var = variable(name, self.dim).ok_or_else(|| ParseError::UnknownVariable {
                    span: t.span,
                    name: name.clone(),
                })?;
                Ok(Arc::new(Node::Var(var)))
            }
            _ => Err(unexpected(&t, "a number, variable, function call or `(`")),
        }
    }
}

fn unexpected(t: &Token, what: &str) -> ParseError {
    if t.tok == Tok::End {
        syntax(t.span, format!("unexpected end of input, expected {what}"))
    } else {
        syntax(t.span, format!("unexpected `{}`, expected {what}", t.text))
    }
}

fn variable(name: &str, dim: usize) -> Option<Var> {
    if name == "t" {
        return Some(Var::Time);
    }
    let digits = name.strip_prefix('x')?;
    if digits.starts_with('0') {
        return None;
    }
    let k: usize = digits.parse().ok()?;
    (1..=dim).contains(&k).then(|| Var::Space(k - 1))
}

pub(super) fn parse(src: &str, dim: usize) -> Result<Arc<Node>, ParseError> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(ParseError::InvalidDimension(dim));
    }
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
    };
    if p.peek().tok == Tok::End {
        return Err(syntax(SourceSpan::new(0, src.len()), "empty expression"));
    }
    let root = p.expr()?;
    let t = p.bump();
    if t.tok != Tok::End {
        return Err(unexpected(&t, "an operator or end of input"));
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(src: &str, dim: usize) -> ParseError {
        parse(src, dim).unwrap_err()
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse("-x1^2 + 3*x1", 1).unwrap();
        let x = || Arc::new(Node::Var(Var::Space(0)));
        let expected = build::add(
            build::neg(build::pow(x(), 2)),
            build::mul(build::constant(3.0), x()),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn negative_integer_exponents() {
        let e = parse("x1^-2", 1).unwrap();
        assert_eq!(*e, Node::Pow(Arc::new(Node::Var(Var::Space(0))), -2));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(err("", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("   ", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("x1 +", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("(x1", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("x1^1.5", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("x1^x1", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("sqrt(x1)", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("x1 x1", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("x1 $ 2", 1), ParseError::Syntax { .. }));
        assert!(matches!(err("1.2.3", 1), ParseError::Syntax { .. }));
    }

    #[test]
    fn variable_range() {
        assert!(matches!(err("y", 2), ParseError::UnknownVariable { .. }));
        assert!(matches!(err("x0", 2), ParseError::UnknownVariable { .. }));
        assert!(matches!(err("x01", 2), ParseError::UnknownVariable { .. }));
        assert!(parse("x1 + x2 + x3 + t", 3).is_ok());
        assert_eq!(err("x1", 4), ParseError::InvalidDimension(4));
        assert_eq!(err("x1", 0), ParseError::InvalidDimension(0));
    }

    #[test]
    fn error_span_points_at_offender() {
        let e = err("1 + 2 * )", 1);
        assert_eq!(e.span(), Some(SourceSpan::new(8, 9)));
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(*parse("1.5e-3", 1).unwrap(), Node::Const(1.5e-3));
        assert_eq!(*parse(".25", 1).unwrap(), Node::Const(0.25));
    }
}
