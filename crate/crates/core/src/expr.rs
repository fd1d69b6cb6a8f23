//! A small infix expression language for coefficients and perturbations.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 't' | 'pi' | 'y' index | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` is right associative (`2^3^2 = 2^9`) and binds tighter than unary
//! minus (`-2^2 = -4`). There is no implicit multiplication.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Atan,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 8] =
        [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Tanh, Func::Atan, Func::Sqrt, Func::Abs];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Tanh => x.tanh(),
            Func::Atan => x.atan(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Nonnegative literal; negative values are written with `Neg`.
    Num(f64),
    Pi,
    T,
    /// State component, 1-based as written (`y1` is `Y(1)`).
    Y(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, t: f64, y: &[f64]) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Pi => std::f64::consts::PI,
            Expr::T => t,
            Expr::Y(i) => y.get(i - 1).copied().unwrap_or(f64::NAN),
            Expr::Neg(e) => -e.eval(t, y),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(t, y), b.eval(t, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => f.apply(e.eval(t, y)),
        }
    }

    /// Largest state index used, 0 if none.
    pub fn max_y_index(&self) -> usize {
        match self {
            Expr::Y(i) => *i,
            Expr::Num(_) | Expr::Pi | Expr::T => 0,
            Expr::Neg(e) | Expr::Call(_, e) => e.max_y_index(),
            Expr::Bin(_, a, b) => a.max_y_index().max(b.max_y_index()),
        }
    }

    pub fn uses_t(&self) -> bool {
        match self {
            Expr::T => true,
            Expr::Num(_) | Expr::Pi | Expr::Y(_) => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses_t(),
            Expr::Bin(_, a, b) => a.uses_t() || b.uses_t(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

struct Wrapped<'a>(&'a Expr, u8);

impl fmt::Display for Wrapped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.precedence() < self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Pi => f.write_str("pi"),
            Expr::T => f.write_str("t"),
            Expr::Y(i) => write!(f, "y{i}"),
            Expr::Neg(e) => write!(f, "-{}", Wrapped(e, 3)),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add => write!(f, "{} + {}", Wrapped(a, 1), Wrapped(b, 2)),
                BinOp::Sub => write!(f, "{} - {}", Wrapped(a, 1), Wrapped(b, 2)),
                BinOp::Mul => write!(f, "{} * {}", Wrapped(a, 2), Wrapped(b, 3)),
                BinOp::Div => write!(f, "{} / {}", Wrapped(a, 2), Wrapped(b, 3)),
                BinOp::Pow => write!(f, "{}^{}", Wrapped(a, 5), Wrapped(b, 3)),
            },
            Expr::Call(func, e) => write!(f, "{}({})", func.name(), e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    col0: usize,
    src: &'a str,
}

/// Parses `src`; error positions are reported as `line` and `col0 + offset`
/// so callers embedding expressions in larger texts get useful locations.
pub fn parse_at(src: &str, line: usize, col0: usize) -> Result<Expr> {
    let toks = tokenize(src, line, col0)?;
    let mut p = Parser { toks, pos: 0, line, col0, src };
    if p.toks.is_empty() {
        return Err(p.error_at(src.len(), "empty expression"));
    }
    let e = p.expr()?;
    if let Some((tok, at)) = p.toks.get(p.pos) {
        return Err(p.error_at(*at, &format!("unexpected {tok:?}")));
    }
    Ok(e)
}

pub fn parse(src: &str) -> Result<Expr> {
    parse_at(src, 1, 1)
}

/// Evaluates an expression that must not depend on `t` or the state.
pub fn parse_constant(src: &str, line: usize, col0: usize) -> Result<f64> {
    let e = parse_at(src, line, col0)?;
    if e.uses_t() || e.max_y_index() > 0 {
        return Err(Error::Parse { line, column: col0, message: "expected a constant expression".into() });
    }
    Ok(e.eval(0.0, &[]))
}

fn tokenize(src: &str, line: usize, col0: usize) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| Error::Parse {
                line,
                column: col0 + start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((Tok::Num(value), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else if c == '(' {
            out.push((Tok::LParen, i));
            i += 1;
        } else if c == ')' {
            out.push((Tok::RParen, i));
            i += 1;
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(Error::Parse { line, column: col0 + i, message: format!("unexpected character '{ch}'") });
        }
    }
    Ok(out)
}

impl Parser<'_> {
    fn error_at(&self, offset: usize, message: &str) -> Error {
        Error::Parse { line: self.line, column: self.col0 + offset, message: message.to_string() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.src.len(), |(_, o)| *o)
    }

    fn eat_op(&mut self, ops: &str) -> Option<char> {
        match self.peek() {
            Some(Tok::Op(c)) if ops.contains(*c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op("+-") {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op("*/") {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op("-").is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op("^").is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.offset();
        let Some((tok, _)) = self.toks.get(self.pos).cloned() else {
            return Err(self.error_at(at, "unexpected end of expression"));
        };
        self.pos += 1;
        match tok {
            Tok::Num(x) => Ok(Expr::Num(x)),
            Tok::LParen => {
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(self.error_at(self.offset(), "expected ')'")),
                }
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| self.error_at(at, &format!("unknown function '{name}'")))?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Tok::RParen) {
                        return Err(self.error_at(self.offset(), "expected ')'"));
                    }
                    self.pos += 1;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "t" => Ok(Expr::T),
                    "pi" => Ok(Expr::Pi),
                    _ => match name.strip_prefix('y').and_then(|d| d.parse::<usize>().ok()) {
                        Some(i) if i >= 1 && !name[1..].starts_with('0') => Ok(Expr::Y(i)),
                        _ => Err(self.error_at(at, &format!("unknown variable '{name}'"))),
                    },
                }
            }
            Tok::Op(c) => Err(self.error_at(at, &format!("unexpected operator '{c}'"))),
            Tok::RParen => Err(self.error_at(at, "unexpected ')'")),
        }
    }
}
