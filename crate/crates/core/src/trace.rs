//! Formula traces: small expression trees that evaluate, render with symbols
//! or with substituted numbers, and parse back.
//!
//! Numbers are rendered with Rust's shortest round-trip formatting, so
//! parsing a substituted rendering and evaluating it repeats the original
//! floating-point operations exactly.

use std::fmt::Write;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Sqrt,
    Ln,
    Exp,
    Max,
    Min,
}

impl Func {
    fn name(&self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
            Func::Exp => "exp",
            Func::Max => "max",
            Func::Min => "min",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        [Func::Sqrt, Func::Ln, Func::Exp, Func::Max, Func::Min]
            .into_iter()
            .find(|f| f.name() == s)
    }

    fn arity(&self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    fn apply(&self, args: &[f64]) -> f64 {
        match self {
            Func::Sqrt => args[0].sqrt(),
            Func::Ln => args[0].ln(),
            Func::Exp => args[0].exp(),
            Func::Max => args[0].max(args[1]),
            Func::Min => args[0].min(args[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String, f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Call(Func, Vec<Expr>),
}

pub fn num(v: f64) -> Expr {
    Expr::Num(v)
}

pub fn var(name: &str, v: f64) -> Expr {
    Expr::Var(name.to_string(), v)
}

pub fn sqrt(e: Expr) -> Expr {
    Expr::Call(Func::Sqrt, vec![e])
}

pub fn ln(e: Expr) -> Expr {
    Expr::Call(Func::Ln, vec![e])
}

pub fn exp(e: Expr) -> Expr {
    Expr::Call(Func::Exp, vec![e])
}

pub fn max(a: Expr, b: Expr) -> Expr {
    Expr::Call(Func::Max, vec![a, b])
}

pub fn min(a: Expr, b: Expr) -> Expr {
    Expr::Call(Func::Min, vec![a, b])
}

impl Expr {
    pub fn pow(self, e: Expr) -> Expr {
        Expr::Pow(Box::new(self), Box::new(e))
    }

    pub fn eval(&self) -> f64 {
        match self {
            Expr::Num(v) | Expr::Var(_, v) => *v,
            Expr::Add(a, b) => a.eval() + b.eval(),
            Expr::Sub(a, b) => a.eval() - b.eval(),
            Expr::Mul(a, b) => a.eval() * b.eval(),
            Expr::Div(a, b) => a.eval() / b.eval(),
            Expr::Pow(a, b) => pow(a.eval(), b.eval()),
            Expr::Neg(a) => -a.eval(),
            Expr::Call(f, args) => {
                let v: Vec<f64> = args.iter().map(Expr::eval).collect();
                f.apply(&v)
            }
        }
    }

    /// Rendering with variable names.
    pub fn symbolic(&self) -> String {
        let mut s = String::new();
        self.render(&mut s, true);
        s
    }

    /// Rendering with every variable replaced by its value.
    pub fn substituted(&self) -> String {
        let mut s = String::new();
        self.render(&mut s, false);
        s
    }

    fn render(&self, out: &mut String, symbols: bool) {
        match self {
            Expr::Num(v) => write_num(out, *v),
            Expr::Var(name, v) => {
                if symbols {
                    out.push_str(name);
                } else {
                    write_num(out, *v);
                }
            }
            Expr::Add(a, b) => binary(out, a, " + ", b, symbols),
            Expr::Sub(a, b) => binary(out, a, " - ", b, symbols),
            Expr::Mul(a, b) => binary(out, a, " * ", b, symbols),
            Expr::Div(a, b) => binary(out, a, " / ", b, symbols),
            Expr::Pow(a, b) => binary(out, a, "^", b, symbols),
            Expr::Neg(a) => {
                out.push_str("(-");
                a.render(out, symbols);
                out.push(')');
            }
            Expr::Call(f, args) => {
                out.push_str(f.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.render(out, symbols);
                }
                out.push(')');
            }
        }
    }
}

/// Integer exponents go through `powi` so renderings stay exact.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn write_num(out: &mut String, v: f64) {
    if v < 0.0 {
        let _ = write!(out, "({v:?})");
    } else {
        let _ = write!(out, "{v:?}");
    }
}

fn binary(out: &mut String, a: &Expr, op: &str, b: &Expr, symbols: bool) {
    out.push('(');
    a.render(out, symbols);
    out.push_str(op);
    b.render(out, symbols);
    out.push(')');
}

macro_rules! impl_op {
    ($tr:ident, $m:ident, $v:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$v(Box::new(self), Box::new(rhs))
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::$v(Box::new(self), Box::new(Expr::Num(rhs)))
            }
        }
        impl $tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::$v(Box::new(Expr::Num(self)), Box::new(rhs))
            }
        }
    };
}

impl_op!(Add, add, Add);
impl_op!(Sub, sub, Sub);
impl_op!(Mul, mul, Mul);
impl_op!(Div, div, Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// One evaluated formula as it appears in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub name: String,
    pub symbolic: String,
    pub substituted: String,
    pub value: f64,
}

impl TraceLine {
    pub fn new(name: &str, e: &Expr) -> Self {
        TraceLine {
            name: name.to_string(),
            symbolic: e.symbolic(),
            substituted: e.substituted(),
            value: e.eval(),
        }
    }

    /// Re-evaluates the substituted rendering.
    pub fn reevaluate(&self) -> Result<f64> {
        evaluate(&self.substituted)
    }
}

/// Parses and evaluates an arithmetic expression over numbers, `+ - * / ^`,
/// parentheses and `sqrt ln exp max min`.
pub fn evaluate(text: &str) -> Result<f64> {
    let mut p = Parser {
        s: text.as_bytes(),
        i: 0,
    };
    let v = p.expr()?;
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(p.error("trailing input"));
    }
    Ok(v)
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::invalid(format!("trace parse error at byte {}: {what}", self.i))
    }

    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.i).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.i += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<f64> {
        let mut v = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.i += 1;
                    v += self.term()?;
                }
                Some(b'-') => {
                    self.i += 1;
                    v -= self.term()?;
                }
                _ => return Ok(v),
            }
        }
    }

    fn term(&mut self) -> Result<f64> {
        let mut v = self.power()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.i += 1;
                    v *= self.power()?;
                }
                Some(b'/') => {
                    self.i += 1;
                    v /= self.power()?;
                }
                _ => return Ok(v),
            }
        }
    }

    fn power(&mut self) -> Result<f64> {
        let base = self.unary()?;
        if self.peek() == Some(b'^') {
            self.i += 1;
            let e = self.power()?;
            return Ok(pow(base, e));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<f64> {
        if self.peek() == Some(b'-') {
            self.i += 1;
            return Ok(-self.unary()?);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<f64> {
        match self.peek() {
            Some(b'(') => {
                self.i += 1;
                let v = self.expr()?;
                self.expect(b')')?;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.i;
                while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
                    self.i += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
                if name == "inf" {
                    return Ok(f64::INFINITY);
                }
                if name == "NaN" {
                    return Ok(f64::NAN);
                }
                let f = Func::from_name(name).ok_or_else(|| self.error("unknown function"))?;
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(b',') {
                    self.i += 1;
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                if args.len() != f.arity() {
                    return Err(self.error("wrong number of arguments"));
                }
                Ok(f.apply(&args))
            }
            _ => Err(self.error("expected a number, function or '('")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.i;
        while self.i < self.s.len() {
            let c = self.s[self.i];
            let exp_sign = (c == b'-' || c == b'+')
                && self.i > start
                && matches!(self.s[self.i - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.i += 1;
            } else {
                break;
            }
        }
        std::str::from_utf8(&self.s[start..self.i])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.error("malformed number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_round_trips() {
        let e = var("eps", 0.1) / (32.0 * var("C", 2.0)) * sqrt(var("n", 1e4) / ln(1.0 + var("x", 3.5)));
        assert_eq!(e.symbolic(), "((eps / (32.0 * C)) * sqrt((n / ln((1.0 + x)))))");
        let line = TraceLine::new("L", &e);
        assert_eq!(line.reevaluate().unwrap().to_bits(), line.value.to_bits());
    }

    #[test]
    fn negative_and_tiny_numbers() {
        let e = exp(-(var("a", 1e-300) * num(-2.5))) + num(1.0 / 3.0).pow(num(2.0));
        let line = TraceLine::new("t", &e);
        assert_eq!(line.reevaluate().unwrap().to_bits(), e.eval().to_bits());
    }

    #[test]
    fn precedence() {
        assert_eq!(evaluate("1 + 2 * 3 ^ 2").unwrap(), 19.0);
        assert_eq!(evaluate("2 ^ 3 ^ 2").unwrap(), 512.0);
        assert_eq!(evaluate("max(1, -2) - min(4, 2e0)").unwrap(), -1.0);
        assert!(evaluate("foo(1)").is_err());
        assert!(evaluate("1 +").is_err());
    }
}
