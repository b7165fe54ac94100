//! Recursive-descent parser for the expression DSL.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;            (* right associative *)
//! primary = number | ident | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" | "sqrt" ;
//! ident   = "q" digits | "v" digits | "t" | param | constant ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! Exponents must fold to an integer or half-integer literal.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use thiserror::Error;

use super::{Expr, Func, Rational, Symbol, Var};

/// Constant names accepted without declaration.
pub const DEFAULT_CONSTANTS: &[&str] = &[
    "m", "g", "hbar", "V", "omega", "e", "B0", "c", "a", "k",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("index of `{name}` at {pos} is outside 1..={n_dof}")]
    IndexOutOfRange { pos: usize, name: String, n_dof: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownIdentifier { pos, .. }
            | ParseError::IndexOutOfRange { pos, .. } => *pos,
        }
    }
}

/// Parser configuration: degrees of freedom, group-parameter spelling and
/// the set of admissible constant names.
#[derive(Debug, Clone)]
pub struct Parser {
    n_dof: usize,
    param: String,
    constants: BTreeSet<String>,
}

impl Parser {
    pub fn new(n_dof: usize) -> Self {
        Self {
            n_dof,
            param: "s".to_string(),
            constants: DEFAULT_CONSTANTS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_param(mut self, name: &str) -> Self {
        self.param = name.to_string();
        self
    }

    pub fn with_constants<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.constants.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn param(&self) -> &str {
        &self.param
    }

    pub fn parse(&self, text: &str) -> Result<Expr, ParseError> {
        let tokens = lex(text)?;
        let mut state = State {
            tokens,
            pos: 0,
            cfg: self,
            end: text.len(),
        };
        let e = state.expr()?;
        if let Some(tok) = state.peek() {
            return Err(ParseError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(e)
    }
}

/// Parses with the default constant set and group parameter `s`.
pub fn parse_expr(text: &str, n_dof: usize) -> Result<Expr, ParseError> {
    Parser::new(n_dof).parse(text)
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(Rational),
    Ident(String),
    Op(char),
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(_) => "number".to_string(),
            Kind::Ident(s) => format!("identifier `{s}`"),
            Kind::Op(c) => format!("`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
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
            let lit = &text[start..i];
            let value = decimal_to_rational(lit).ok_or_else(|| ParseError::Syntax {
                pos: start,
                msg: format!("malformed number `{lit}`"),
            })?;
            out.push(Token { kind: Kind::Num(value), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: Kind::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^()".contains(c) {
            out.push(Token { kind: Kind::Op(c), pos: i });
            i += 1;
        } else {
            // Report the character, not the byte, for non-ASCII input.
            let ch = text[i..].chars().next().unwrap_or(c);
            return Err(ParseError::Syntax {
                pos: i,
                msg: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

/// Exact value of a decimal literal such as `9.81` or `1e-3`.
fn decimal_to_rational(lit: &str) -> Option<Rational> {
    let (mantissa, exponent) = match lit.find(['e', 'E']) {
        Some(k) => (&lit[..k], lit[k + 1..].parse::<i32>().ok()?),
        None => (lit, 0),
    };
    let mut parts = mantissa.splitn(2, '.');
    let int_part = parts.next().unwrap_or("");
    let frac_part = parts.next().unwrap_or("");
    if frac_part.contains('.') || (int_part.is_empty() && frac_part.is_empty()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Some(value)
}

struct State<'a> {
    tokens: Vec<Token>,
    pos: usize,
    cfg: &'a Parser,
    end: usize,
}

impl State<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: Kind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            let found = self
                .peek()
                .map_or("end of input".to_string(), |t| t.kind.describe());
            Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expected `{op}`, found {found}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            terms.push(if op == '+' { rhs } else { -rhs });
        }
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.unary()?];
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            factors.push(if op == '*' { rhs } else { rhs.recip() });
        }
        Ok(Expr::mul(factors))
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek_op() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let at = self.here();
        let exponent = self.unary()?;
        let k = match exponent {
            Expr::Num(k) => k,
            _ => {
                return Err(ParseError::Syntax {
                    pos: at,
                    msg: "exponent must be a numeric literal".to_string(),
                })
            }
        };
        let two = Rational::from_integer(BigInt::from(2));
        if !(k.clone() * two).is_integer() {
            return Err(ParseError::Syntax {
                pos: at,
                msg: format!("exponent {k} is not an integer or half-integer"),
            });
        }
        Ok(Expr::pow(base, k))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = match self.peek() {
            Some(tok) => tok.clone(),
            None => {
                return Err(ParseError::Syntax {
                    pos: self.end,
                    msg: "unexpected end of input".to_string(),
                })
            }
        };
        self.pos += 1;
        match tok.kind {
            Kind::Num(r) => Ok(Expr::Num(r)),
            Kind::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Kind::Op(c) => Err(ParseError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected `{c}`"),
            }),
            Kind::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    if self.peek_op() != Some('(') {
                        return Err(ParseError::Syntax {
                            pos: self.here(),
                            msg: format!("expected `(` after `{name}`"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::func(f, arg));
                }
                self.identifier(&name, tok.pos)
            }
        }
    }

    fn identifier(&self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        if name == self.cfg.param {
            return Ok(Expr::Sym(Symbol::Var(Var::Param)));
        }
        if name == "t" {
            return Ok(Expr::t());
        }
        for (prefix, is_coord) in [("q", true), ("v", false)] {
            if let Some(digits) = name.strip_prefix(prefix) {
                if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    let index: usize = digits.parse().unwrap_or(0);
                    if index == 0 || index > self.cfg.n_dof {
                        return Err(ParseError::IndexOutOfRange {
                            pos,
                            name: name.to_string(),
                            n_dof: self.cfg.n_dof,
                        });
                    }
                    return Ok(if is_coord {
                        Expr::q(index - 1)
                    } else {
                        Expr::v(index - 1)
                    });
                }
            }
        }
        if self.cfg.constants.contains(name) {
            return Ok(Expr::constant(name));
        }
        Err(ParseError::UnknownIdentifier {
            pos,
            name: name.to_string(),
        })
    }
}
