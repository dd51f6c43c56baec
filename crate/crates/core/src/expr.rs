//! Closed-form scalar fields `phi(x, y0, y1, ...)` with symbolic derivatives.
//!
//! Volatility specifications are written as small expressions such as
//! `0.02*exp(-0.5*x)*(1 + 0.5*y)`. The variable `x` is the maturity, `y`
//! (alias `y0`) and `y1`, `y2`, ... are functional values or, for local
//! volatilities, the curve value `h(x)`. Supported building blocks are
//! polynomials, `exp`, `ln`, `sqrt`, products, quotients and constant powers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    Y(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
}

use Expr::*;

fn c(v: f64) -> Expr {
    Const(v)
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Const(k) if *k == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Const(x), Const(y)) => c(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Const(x), Const(y)) => c(x - y),
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        _ => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Const(x), Const(y)) => c(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => c(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        _ => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Const(x), Const(y)) if *y != 0.0 => c(x / y),
        _ if is_const(&a, 0.0) => c(0.0),
        _ if is_const(&b, 1.0) => a,
        _ => Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Const(x) => c(-x),
        Neg(inner) => *inner,
        other => Neg(Box::new(other)),
    }
}

fn pow(a: Expr, p: f64) -> Expr {
    if p == 0.0 {
        return c(1.0);
    }
    if p == 1.0 {
        return a;
    }
    match a {
        Const(x) => c(x.powf(p)),
        other => Pow(Box::new(other), p),
    }
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        c(v)
    }

    pub fn eval(&self, x: f64, ys: &[f64]) -> f64 {
        match self {
            Const(v) => *v,
            X => x,
            Y(k) => ys.get(*k).copied().unwrap_or(f64::NAN),
            Neg(a) => -a.eval(x, ys),
            Add(a, b) => a.eval(x, ys) + b.eval(x, ys),
            Sub(a, b) => a.eval(x, ys) - b.eval(x, ys),
            Mul(a, b) => a.eval(x, ys) * b.eval(x, ys),
            Div(a, b) => a.eval(x, ys) / b.eval(x, ys),
            Pow(a, p) => {
                let base = a.eval(x, ys);
                if p.fract() == 0.0 && p.abs() < 64.0 {
                    base.powi(*p as i32)
                } else {
                    base.powf(*p)
                }
            }
            Exp(a) => a.eval(x, ys).exp(),
            Ln(a) => a.eval(x, ys).ln(),
            Sqrt(a) => a.eval(x, ys).sqrt(),
        }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Const(_) => c(0.0),
            X => c(if var == Var::X { 1.0 } else { 0.0 }),
            Y(k) => c(if var == Var::Y(*k) { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(var)),
            Add(a, b) => add(a.diff(var), b.diff(var)),
            Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Mul(a, b) => add(
                mul(a.diff(var), (**b).clone()),
                mul((**a).clone(), b.diff(var)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.diff(var), (**b).clone()),
                    mul((**a).clone(), b.diff(var)),
                ),
                pow((**b).clone(), 2.0),
            ),
            Pow(a, p) => mul(mul(c(*p), pow((**a).clone(), p - 1.0)), a.diff(var)),
            Exp(a) => mul(self.clone(), a.diff(var)),
            Ln(a) => div(a.diff(var), (**a).clone()),
            Sqrt(a) => div(a.diff(var), mul(c(2.0), self.clone())),
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Const(_) => false,
            X => var == Var::X,
            Y(k) => var == Var::Y(*k),
            Neg(a) | Pow(a, _) | Exp(a) | Ln(a) | Sqrt(a) => a.depends_on(var),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Largest `y` index referenced, if any.
    pub fn max_y_index(&self) -> Option<usize> {
        match self {
            Const(_) | X => None,
            Y(k) => Some(*k),
            Neg(a) | Pow(a, _) | Exp(a) | Ln(a) | Sqrt(a) => a.max_y_index(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
                match (a.max_y_index(), b.max_y_index()) {
                    (Some(i), Some(j)) => Some(i.max(j)),
                    (i, j) => i.or(j),
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            X => write!(f, "x"),
            Y(0) => write!(f, "y"),
            Y(k) => write!(f, "y{k}"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "{a}*{b}"),
            Div(a, b) => write!(f, "{a}/({b})"),
            Pow(a, p) => write!(f, "({a})^({p:?})"),
            Exp(a) => write!(f, "exp({a})"),
            Ln(a) => write!(f, "ln({a})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
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
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| Error::Expr {
                position: start,
                message: format!("bad number '{text}'"),
            })?;
            out.push((start, Token::Num(v)));
        } else if ch.is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
        } else if "+-*/^()".contains(ch) {
            out.push((i, Token::Op(ch)));
            i += 1;
        } else {
            return Err(Error::Expr {
                position: i,
                message: format!("unexpected '{ch}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn at(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(self.len)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expr {
            position: self.at(),
            message: message.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let at = self.at();
            let exponent = self.unary()?;
            if exponent.depends_on(Var::X) || exponent.max_y_index().is_some() {
                return Err(Error::Expr {
                    position: at,
                    message: "exponent must be a constant".into(),
                });
            }
            return Ok(Pow(Box::new(base), exponent.eval(0.0, &[])));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Const(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(X),
                    "y" => Ok(Y(0)),
                    "exp" | "ln" | "sqrt" => {
                        if !self.eat('(') {
                            return self.err(format!("expected '(' after {name}"));
                        }
                        let arg = Box::new(self.expr()?);
                        if !self.eat(')') {
                            return self.err("expected ')'");
                        }
                        Ok(match name.as_str() {
                            "exp" => Exp(arg),
                            "ln" => Ln(arg),
                            _ => Sqrt(arg),
                        })
                    }
                    other => match other
                        .strip_prefix('y')
                        .and_then(|k| k.parse::<usize>().ok())
                    {
                        Some(k) => Ok(Y(k)),
                        None => {
                            self.pos -= 1;
                            self.err(format!("unknown identifier '{other}'"))
                        }
                    },
                }
            }
            Some(Token::Op(op)) => self.err(format!("unexpected '{op}'")),
            None => self.err("unexpected end of expression"),
        }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = tokenize(s)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            len: s.len(),
        };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return p.err("trailing input");
        }
        Ok(e)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e(s: &str) -> Expr {
        s.parse().unwrap()
    }

    #[test]
    fn parses_and_evaluates() {
        let phi = e("0.02*exp(-0.5*x)*(1 + 0.5*y)");
        let v = phi.eval(2.0, &[0.03]);
        assert_relative_eq!(v, 0.02 * (-1.0_f64).exp() * 1.015, max_relative = 1e-15);
        assert_relative_eq!(e("2^3 - 1e-1").eval(0.0, &[]), 7.9);
        assert_relative_eq!(e("sqrt(y1)/y").eval(0.0, &[2.0, 16.0]), 2.0);
        assert_relative_eq!(e("-x^2").eval(3.0, &[]), -9.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!("0.02*exp(".parse::<Expr>().is_err());
        assert!("foo(x)".parse::<Expr>().is_err());
        assert!("x^y".parse::<Expr>().is_err());
        assert!("x # 2".parse::<Expr>().is_err());
        assert!("(x".parse::<Expr>().is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let phi = e("0.02*exp(-0.5*x)*sqrt(y)*(1 + x*y^2)/(2 + ln(1 + y))");
        let (x, y) = (1.3, 0.04);
        let h = 1e-6;
        let dx = phi.diff(Var::X).eval(x, &[y]);
        let dy = phi.diff(Var::Y(0)).eval(x, &[y]);
        let fdx = (phi.eval(x + h, &[y]) - phi.eval(x - h, &[y])) / (2.0 * h);
        let fdy = (phi.eval(x, &[y + h * 0.01]) - phi.eval(x, &[y - h * 0.01])) / (2.0 * h * 0.01);
        assert_relative_eq!(dx, fdx, max_relative = 1e-7);
        assert_relative_eq!(dy, fdy, max_relative = 1e-6);
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "0.02*exp(-0.5*x)*(1 + 0.5*y)",
            "sqrt(0.5*y1) - x/(1+x)^2",
            "-3*ln(y)",
        ] {
            let a = e(src);
            let b = e(&a.to_string());
            for (x, y) in [(0.5, 0.2), (2.0, 1.5)] {
                assert_relative_eq!(a.eval(x, &[y, y]), b.eval(x, &[y, y]), max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn dependency_queries() {
        let phi = e("0.02*exp(-0.5*x)");
        assert!(phi.depends_on(Var::X));
        assert!(!phi.depends_on(Var::Y(0)));
        assert_eq!(e("y3 + y").max_y_index(), Some(3));
        assert_eq!(phi.diff(Var::Y(0)), Expr::Const(0.0));
    }
}
