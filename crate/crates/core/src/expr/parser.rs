use thiserror::Error;

use super::ast::{is_keyword, CompareOp, Expr, Operand, SymbolPath, MAX_PATH_SEGMENTS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ExpressionError {
    /// Byte offset into the source where the problem was detected.
    pub offset: usize,
    pub kind: ExpressionErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpressionErrorKind {
    #[error("empty expression")]
    Empty,
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("malformed symbol path: {0}")]
    MalformedPath(String),
    #[error("invalid number literal `{0}`")]
    InvalidNumber(String),
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("invalid escape sequence `{0}`")]
    InvalidEscape(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Dot,
    Number(f64),
    Str(String),
    True,
    False,
    Not,
    And,
    Or,
    Cmp(CompareOp),
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => s.clone(),
            Tok::Dot => ".".into(),
            Tok::Number(n) => n.to_string(),
            Tok::Str(s) => format!("{s:?}"),
            Tok::True => "true".into(),
            Tok::False => "false".into(),
            Tok::Not => "!".into(),
            Tok::And => "&&".into(),
            Tok::Or => "||".into(),
            Tok::Cmp(op) => op.symbol().into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn err(offset: usize, kind: ExpressionErrorKind) -> ExpressionError {
    ExpressionError { offset, kind }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExpressionError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                out.push((Tok::LParen, start));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, start));
                i += 1;
            }
            b'.' => {
                out.push((Tok::Dot, start));
                i += 1;
            }
            b'&' | b'|' => {
                if bytes.get(i + 1) == Some(&c) {
                    out.push((if c == b'&' { Tok::And } else { Tok::Or }, start));
                    i += 2;
                } else {
                    return Err(err(
                        start,
                        ExpressionErrorKind::UnknownOperator((c as char).to_string()),
                    ));
                }
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Tok::Cmp(CompareOp::Ne), start));
                    i += 2;
                } else {
                    out.push((Tok::Not, start));
                    i += 1;
                }
            }
            b'=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push((Tok::Cmp(CompareOp::Eq), start));
                    i += 2;
                } else {
                    return Err(err(start, ExpressionErrorKind::UnknownOperator("=".into())));
                }
            }
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', false) => CompareOp::Lt,
                    (b'<', true) => CompareOp::Le,
                    (_, false) => CompareOp::Gt,
                    (_, true) => CompareOp::Ge,
                };
                out.push((Tok::Cmp(op), start));
                i += if eq { 2 } else { 1 };
            }
            b'"' => {
                let (s, next) = lex_string(src, i)?;
                out.push((Tok::Str(s), start));
                i = next;
            }
            b'-' | b'0'..=b'9' => {
                let mut j = i + 1;
                if c == b'-' && !bytes.get(j).is_some_and(u8::is_ascii_digit) {
                    return Err(err(start, ExpressionErrorKind::UnknownOperator("-".into())));
                }
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'.' {
                    j += 1;
                    let frac_start = j;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    if j == frac_start {
                        return Err(err(
                            start,
                            ExpressionErrorKind::InvalidNumber(src[start..j].to_string()),
                        ));
                    }
                }
                if j < bytes.len() && (bytes[j].is_ascii_alphabetic() || bytes[j] == b'_') {
                    while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                        j += 1;
                    }
                    return Err(err(
                        start,
                        ExpressionErrorKind::InvalidNumber(src[start..j].to_string()),
                    ));
                }
                let text = &src[start..j];
                let n: f64 = text
                    .parse()
                    .map_err(|_| err(start, ExpressionErrorKind::InvalidNumber(text.into())))?;
                if !n.is_finite() {
                    return Err(err(start, ExpressionErrorKind::InvalidNumber(text.into())));
                }
                out.push((Tok::Number(n), start));
                i = j;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let word = &src[start..j];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
                i = j;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(start, ExpressionErrorKind::UnexpectedToken(ch.to_string())));
            }
        }
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

fn lex_string(src: &str, open: usize) -> Result<(String, usize), ExpressionError> {
    let mut out = String::new();
    let mut chars = src[open + 1..].char_indices();
    while let Some((rel, ch)) = chars.next() {
        let at = open + 1 + rel;
        match ch {
            '"' => return Ok((out, at + 1)),
            '\\' => {
                let Some((_, esc)) = chars.next() else {
                    return Err(err(open, ExpressionErrorKind::UnterminatedString));
                };
                match esc {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' => {
                        // \u{XXXX}
                        let rest = &src[at + 2..];
                        let decoded = rest
                            .strip_prefix('{')
                            .and_then(|r| r.find('}').map(|end| &r[..end]))
                            .and_then(|hex| {
                                u32::from_str_radix(hex, 16)
                                    .ok()
                                    .and_then(char::from_u32)
                                    .map(|c| (c, hex.len()))
                            });
                        let Some((c, hex_len)) = decoded else {
                            return Err(err(at, ExpressionErrorKind::InvalidEscape("\\u".into())));
                        };
                        out.push(c);
                        // consume `{`, the hex digits and `}`
                        for _ in 0..hex_len + 2 {
                            chars.next();
                        }
                    }
                    other => {
                        return Err(err(at, ExpressionErrorKind::InvalidEscape(format!("\\{other}"))))
                    }
                }
            }
            c => out.push(c),
        }
    }
    Err(err(open, ExpressionErrorKind::UnterminatedString))
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ExpressionError {
        match self.peek() {
            Tok::Eof => err(self.offset(), ExpressionErrorKind::UnexpectedEnd),
            t => err(self.offset(), ExpressionErrorKind::UnexpectedToken(t.describe())),
        }
    }

    fn parse_or(&mut self) -> Result<Expr, ExpressionError> {
        let mut lhs = self.parse_and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, ExpressionError> {
        let mut lhs = self.parse_unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ExpressionError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Expr::not(self.parse_unary()?));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Expr, ExpressionError> {
        if *self.peek() == Tok::LParen {
            self.bump();
            let inner = self.parse_or()?;
            if *self.peek() != Tok::RParen {
                return Err(self.unexpected());
            }
            self.bump();
            return Ok(inner);
        }
        let lhs = self.parse_operand()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.parse_operand()?;
            return Ok(Expr::compare(op, lhs, rhs));
        }
        Ok(match lhs {
            Operand::Bool(b) => Expr::Bool(b),
            Operand::Number(n) => Expr::Number(n),
            Operand::Text(s) => Expr::Text(s),
            Operand::Path(p) => Expr::Path(p),
        })
    }

    fn parse_operand(&mut self) -> Result<Operand, ExpressionError> {
        match self.peek().clone() {
            Tok::True => {
                self.bump();
                Ok(Operand::Bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Operand::Bool(false))
            }
            Tok::Number(n) => {
                self.bump();
                Ok(Operand::Number(n))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Text(s))
            }
            Tok::Ident(first) => {
                let start = self.offset();
                self.bump();
                let mut segments = vec![first];
                while *self.peek() == Tok::Dot {
                    let dot_at = self.offset();
                    self.bump();
                    match self.peek().clone() {
                        Tok::Ident(seg) => {
                            self.bump();
                            segments.push(seg);
                        }
                        Tok::True | Tok::False => {
                            return Err(err(
                                self.offset(),
                                ExpressionErrorKind::MalformedPath(
                                    "keyword used as path segment".into(),
                                ),
                            ))
                        }
                        _ => {
                            return Err(err(
                                dot_at,
                                ExpressionErrorKind::MalformedPath(
                                    "expected identifier after `.`".into(),
                                ),
                            ))
                        }
                    }
                }
                if segments.len() > MAX_PATH_SEGMENTS {
                    return Err(err(
                        start,
                        ExpressionErrorKind::MalformedPath(format!(
                            "{} segments, at most {MAX_PATH_SEGMENTS} allowed",
                            segments.len()
                        )),
                    ));
                }
                debug_assert!(segments.iter().all(|s| !is_keyword(s)));
                Ok(Operand::Path(
                    SymbolPath::new(segments).expect("lexer produces identifiers"),
                ))
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Parses an availability expression.
///
/// Precedence from tightest: `!`, comparison, `&&`, `||`. Binary logical
/// operators associate to the left.
pub fn parse_expression(src: &str) -> Result<Expr, ExpressionError> {
    if src.trim().is_empty() {
        return Err(err(0, ExpressionErrorKind::Empty));
    }
    let toks = lex(src)?;
    let mut parser = Parser { toks, pos: 0 };
    let expr = parser.parse_or()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.unexpected());
    }
    Ok(expr)
}
