//! A small expression language for Finsler functions and curves.
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = unary { ("*" | "/") unary } ;
//! unary    = "-" unary | power ;
//! power    = atom [ "^" exponent ] ;
//! exponent = unary ;                      (must fold to a rational constant)
//! atom     = number | variable | "pi" | call | "(" expr ")" ;
//! call     = ("sqrt" | "sin" | "cos" | "exp" | "log" | "atan" | "acos") "(" expr ")"
//!          | "pow" "(" expr "," expr ")" ;   (second argument rational)
//! variable = ("x" | "u") digit { digit } | "t" ;
//! number   = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! Variables `x1..xm` are base coordinates and `u1..um` fiber coordinates.
//! Curves use `t` for their parameter. There is no `abs` and no conditional: every expression
//! is smooth wherever it is defined.

use std::fmt;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    /// Base coordinate, zero-based.
    X(usize),
    /// Fiber coordinate, zero-based.
    U(usize),
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Atan,
    /// Defined on the open interval `(−1, 1)` only.
    Acos,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Atan => "atan",
            Func::Acos => "acos",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "atan" => Func::Atan,
            "acos" => Func::Acos,
            _ => return None,
        })
    }
}

/// Reduced fraction with positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Option<Rational> {
        if den == 0 {
            return None;
        }
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i64;
        let s = if den < 0 { -1 } else { 1 };
        Some(Rational {
            num: s * num / g,
            den: s * den / g,
        })
    }

    pub fn integer(n: i64) -> Rational {
        Rational { num: n, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Best rational approximation with a bounded denominator, accepted only
    /// when it reproduces `v` to near machine precision.
    pub fn approximate(v: f64) -> Option<Rational> {
        if !v.is_finite() || v.abs() > 1e9 {
            return None;
        }
        // continued fraction convergents
        let (mut h0, mut h1) = (0i64, 1i64);
        let (mut k0, mut k1) = (1i64, 0i64);
        let mut x = v;
        for _ in 0..40 {
            let a = x.floor();
            let ai = a as i64;
            let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
            let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
            if k2 > 1_000_000 {
                break;
            }
            h0 = h1;
            h1 = h2;
            k0 = k1;
            k1 = k2;
            let approx = h1 as f64 / k1 as f64;
            if (approx - v).abs() <= 1e-12 * v.abs().max(1.0) {
                return Rational::new(h1, k1);
            }
            let frac = x - a;
            if frac == 0.0 {
                break;
            }
            x = 1.0 / frac;
        }
        None
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rational),
    Call(Func, Box<Expr>),
}

/// Variable assignment for [`Expr::eval`].
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, S> {
    pub x: &'a [S],
    pub u: &'a [S],
    pub t: Option<&'a S>,
}

impl<'a, S> Env<'a, S> {
    pub fn xu(x: &'a [S], u: &'a [S]) -> Self {
        Env { x, u, t: None }
    }

    pub fn time(t: &'a S) -> Self {
        Env {
            x: &[],
            u: &[],
            t: Some(t),
        }
    }
}

/// Highest variable indices used by an expression (one-based, 0 = unused).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub max_x: usize,
    pub max_u: usize,
    pub uses_t: bool,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        if text.trim().is_empty() {
            return Err(Error::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            end: text.len(),
        };
        let e = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(Error::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(e)
    }

    pub fn usage(&self) -> Usage {
        let mut usage = Usage::default();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                match *v {
                    Var::X(i) => usage.max_x = usage.max_x.max(i + 1),
                    Var::U(i) => usage.max_u = usage.max_u.max(i + 1),
                    Var::T => usage.uses_t = true,
                }
            }
        });
        usage
    }

    /// Checks that every base and fiber index is at most `m`.
    pub fn check_closed(&self, m: usize) -> Result<()> {
        let usage = self.usage();
        let worst = usage.max_x.max(usage.max_u);
        if worst > m {
            return Err(Error::Dimension {
                expected: m,
                found: worst,
            });
        }
        Ok(())
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Evaluates over any scalar carrier. Domain violations (square root of a
    /// negative, logarithm of a non-positive, fractional power of a
    /// non-positive base, division by zero) are reported with the offending
    /// subtree.
    pub fn eval<S: Scalar>(&self, env: &Env<'_, S>) -> Result<S> {
        Ok(match self {
            Expr::Const(c) => S::from_f64(*c),
            Expr::Var(v) => {
                let slot = match *v {
                    Var::X(i) => env.x.get(i),
                    Var::U(i) => env.u.get(i),
                    Var::T => env.t,
                };
                slot.cloned()
                    .ok_or_else(|| Error::UnboundVariable(Expr::Var(*v).to_string()))?
            }
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => {
                let num = a.eval(env)?;
                let den = b.eval(env)?;
                if den.value() == 0.0 {
                    return Err(self.domain("division by zero"));
                }
                num / den
            }
            Expr::Pow(a, r) => {
                let base = a.eval(env)?;
                if r.den == 1 {
                    base.powi(r.num as i32)
                } else {
                    if base.value() <= 0.0 {
                        return Err(self.domain("fractional power of a non-positive base"));
                    }
                    base.powf(r.as_f64())
                }
            }
            Expr::Call(func, a) => {
                let arg = a.eval(env)?;
                match func {
                    Func::Sqrt => {
                        if arg.value() < 0.0 {
                            return Err(self.domain("square root of a negative value"));
                        }
                        arg.sqrt()
                    }
                    Func::Log => {
                        if arg.value() <= 0.0 {
                            return Err(self.domain("logarithm of a non-positive value"));
                        }
                        arg.ln()
                    }
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Exp => arg.exp(),
                    Func::Atan => arg.atan(),
                    Func::Acos => {
                        if arg.value().abs() >= 1.0 {
                            return Err(self.domain("arc cosine outside (-1, 1)"));
                        }
                        arg.acos()
                    }
                }
            }
        })
    }

    fn domain(&self, message: &str) -> Error {
        Error::Domain {
            subtree: self.to_string(),
            message: message.into(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::U(i)) => write!(f, "u{}", i + 1),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                if let Expr::Const(c) = **a {
                    // keep the negation from folding into the literal on re-parse
                    return write!(f, "({c})");
                }
                a.write_prec(f, 3)
            }
            Expr::Add(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " + ")?;
                b.write_prec(f, 2)
            }
            Expr::Sub(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " - ")?;
                b.write_prec(f, 2)
            }
            Expr::Mul(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "*")?;
                b.write_prec(f, 3)
            }
            Expr::Div(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "/")?;
                b.write_prec(f, 3)
            }
            Expr::Pow(a, r) => {
                a.write_prec(f, 5)?;
                if r.den == 1 && r.num >= 0 {
                    write!(f, "^{}", r.num)
                } else if r.den == 1 {
                    write!(f, "^({})", r.num)
                } else {
                    write!(f, "^({}/{})", r.num, r.den)
                }
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_bare(f)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Caret => "`^`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
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
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Number(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        tokens.push(Token { kind, offset: start });
        i += 1;
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<()> {
        if self.eat(&kind) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected {}", kind.describe())))
        }
    }

    fn unexpected(&self, message: &str) -> Error {
        let found = self
            .peek()
            .map_or_else(|| "end of input".to_string(), |t| t.kind.describe());
        Error::Syntax {
            offset: self.offset(),
            message: format!("{message}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&TokenKind::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&TokenKind::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(&TokenKind::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(&TokenKind::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&TokenKind::Minus) {
            // a minus directly on a literal folds into the constant
            if let Some(Token {
                kind: TokenKind::Number(v),
                ..
            }) = self.peek().cloned()
            {
                if self.tokens.get(self.pos + 1).map(|t| &t.kind) != Some(&TokenKind::Caret) {
                    self.pos += 1;
                    return Ok(Expr::Const(-v));
                }
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(&TokenKind::Caret) {
            let at = self.offset();
            let exponent = self.unary()?;
            let r = rational_constant(&exponent).ok_or_else(|| Error::Syntax {
                offset: at,
                message: "exponent must be a rational constant".into(),
            })?;
            if self.peek().map(|t| &t.kind) == Some(&TokenKind::Caret) {
                return Err(self.unexpected("chained powers need parentheses"));
            }
            return Ok(Expr::Pow(Box::new(base), r));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("expected an operand"));
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if self.peek().map(|t| &t.kind) == Some(&TokenKind::LParen) {
                    self.pos += 1;
                    return self.call(&name, tok.offset);
                }
                identifier(&name, tok.offset)
            }
            _ => Err(self.unexpected("expected an operand")),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr> {
        let mut args = vec![self.expr()?];
        while self.eat(&TokenKind::Comma) {
            args.push(self.expr()?);
        }
        self.expect(TokenKind::RParen)?;
        if name == "pow" {
            if args.len() != 2 {
                return Err(Error::Arity {
                    name: name.into(),
                    expected: 2,
                    found: args.len(),
                });
            }
            let r = rational_constant(&args[1]).ok_or_else(|| Error::Syntax {
                offset,
                message: "pow exponent must be a rational constant".into(),
            })?;
            let base = args.swap_remove(0);
            return Ok(Expr::Pow(Box::new(base), r));
        }
        let func = Func::from_name(name).ok_or_else(|| Error::UnknownIdentifier {
            name: name.into(),
            offset,
        })?;
        if args.len() != 1 {
            return Err(Error::Arity {
                name: name.into(),
                expected: 1,
                found: args.len(),
            });
        }
        Ok(Expr::Call(func, Box::new(args.remove(0))))
    }
}

fn identifier(name: &str, offset: usize) -> Result<Expr> {
    let unknown = || Error::UnknownIdentifier {
        name: name.into(),
        offset,
    };
    match name {
        "t" => return Ok(Expr::Var(Var::T)),
        "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
        _ => {}
    }
    let (head, digits) = name.split_at(1);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(unknown());
    }
    let index: usize = digits.parse().map_err(|_| unknown())?;
    if index == 0 {
        return Err(unknown());
    }
    match head {
        "x" => Ok(Expr::Var(Var::X(index - 1))),
        "u" => Ok(Expr::Var(Var::U(index - 1))),
        _ => Err(unknown()),
    }
}

fn rational_constant(e: &Expr) -> Option<Rational> {
    let v = constant_value(e)?;
    Rational::approximate(v)
}

fn constant_value(e: &Expr) -> Option<f64> {
    Some(match e {
        Expr::Const(c) => *c,
        Expr::Neg(a) => -constant_value(a)?,
        Expr::Add(a, b) => constant_value(a)? + constant_value(b)?,
        Expr::Sub(a, b) => constant_value(a)? - constant_value(b)?,
        Expr::Mul(a, b) => constant_value(a)? * constant_value(b)?,
        Expr::Div(a, b) => constant_value(a)? / constant_value(b)?,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DiffScalar;
    use proptest::prelude::*;

    fn u(i: usize) -> Box<Expr> {
        Box::new(Expr::Var(Var::U(i)))
    }

    #[test]
    fn parses_euclidean_norm() {
        let e = Expr::parse("sqrt(u1^2 + u2^2)").unwrap();
        let expected = Expr::Call(
            Func::Sqrt,
            Box::new(Expr::Add(
                Box::new(Expr::Pow(u(0), Rational::integer(2))),
                Box::new(Expr::Pow(u(1), Rational::integer(2))),
            )),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn trailing_operator_reports_offset() {
        let err = Expr::parse("u1 +").unwrap_err();
        assert!(matches!(err, Error::Syntax { offset: 4, .. }), "{err:?}");
    }

    #[test]
    fn sphere_like_metric_parses() {
        let e = Expr::parse("sqrt(u1^2 + sin(x1)^2 * u2^2)").unwrap();
        assert_eq!(
            e.usage(),
            Usage {
                max_x: 1,
                max_u: 2,
                uses_t: false
            }
        );
    }

    #[test]
    fn unknown_identifier_and_arity() {
        assert!(matches!(
            Expr::parse("foo(u1)"),
            Err(Error::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("y1 + 2"),
            Err(Error::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            Expr::parse("sqrt(u1, u2)"),
            Err(Error::Arity { expected: 1, found: 2, .. })
        ));
        assert!(matches!(
            Expr::parse("pow(u1)"),
            Err(Error::Arity { expected: 2, .. })
        ));
        assert!(matches!(Expr::parse("u1^x1"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn rational_exponents() {
        let e = Expr::parse("(u1^4 + u2^4)^(1/4)").unwrap();
        match e {
            Expr::Pow(_, r) => assert_eq!(r, Rational { num: 1, den: 4 }),
            other => panic!("{other:?}"),
        }
        match Expr::parse("pow(u1, 0.25)").unwrap() {
            Expr::Pow(_, r) => assert_eq!(r, Rational { num: 1, den: 4 }),
            other => panic!("{other:?}"),
        }
        match Expr::parse("u1^-2").unwrap() {
            Expr::Pow(_, r) => assert_eq!(r, Rational::integer(-2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn evaluates_over_reals_and_carriers() {
        let e = Expr::parse("u1^2+u2^2").unwrap();
        assert_eq!(e.eval(&Env::xu(&[], &[3.0, 4.0])).unwrap(), 25.0);

        let norm = Expr::parse("sqrt(u1^2+u2^2)").unwrap();
        let u = [DiffScalar::variable(3.0, 0), DiffScalar::constant(4.0)];
        let v = norm.eval(&Env::xu(&[], &u)).unwrap();
        assert_eq!(v.value(), 5.0);
        assert!((v.coefficient(1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let e = Expr::parse("log(u1)").unwrap();
        match e.eval(&Env::xu(&[], &[-1.0])) {
            Err(Error::Domain { subtree, .. }) => assert_eq!(subtree, "log(u1)"),
            other => panic!("{other:?}"),
        }
        let e = Expr::parse("1 + sqrt(u1 - 2)").unwrap();
        match e.eval(&Env::xu(&[], &[1.0])) {
            Err(Error::Domain { subtree, .. }) => assert_eq!(subtree, "sqrt(u1 - 2)"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_literals_print_and_reparse() {
        for s in ["-2*u1", "u1 - -2", "-u1^2", "(-u1)^2", "2^(-1)*u1", "x1/(x2*u1)", "u1-(u2-u1)"] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} -> {e}");
        }
        assert_eq!(
            Expr::parse("-u1^2").unwrap(),
            Expr::Neg(Box::new(Expr::Pow(u(0), Rational::integer(2))))
        );
    }

    #[test]
    fn closedness_check() {
        let e = Expr::parse("sqrt(u1^2 + u3^2)").unwrap();
        assert!(e.check_closed(3).is_ok());
        assert!(e.check_closed(2).is_err());
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (1usize..4).prop_map(|i| format!("u{i}")),
            (1usize..4).prop_map(|i| format!("x{i}")),
            (0u32..100).prop_map(|n| format!("{}", n as f64 / 8.0)),
            Just("t".to_string()),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*{b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}/({b})")),
                inner.clone().prop_map(|a| format!("-({a})")),
                (inner.clone(), -3i64..4).prop_map(|(a, n)| format!("({a})^{n}")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("pow({a}, 3/2)")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(s in arb_expr()) {
            let e = Expr::parse(&s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            prop_assert_eq!(e, again);
        }

        #[test]
        fn reals_and_depth_zero_carriers_agree_bitwise(
            s in arb_expr(),
            xs in proptest::collection::vec(0.1f64..2.0, 3),
            us in proptest::collection::vec(0.1f64..2.0, 3),
            t in 0.1f64..2.0,
        ) {
            let e = Expr::parse(&s).unwrap();
            let plain = e.eval(&Env { x: &xs, u: &us, t: Some(&t) });
            let xd: Vec<DiffScalar> = xs.iter().map(|&v| DiffScalar::constant(v)).collect();
            let ud: Vec<DiffScalar> = us.iter().map(|&v| DiffScalar::constant(v)).collect();
            let td = DiffScalar::constant(t);
            let carried = e.eval(&Env { x: &xd, u: &ud, t: Some(&td) });
            match (plain, carried) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.value().to_bits()),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }
}
