//! Scalar expressions in the plane coordinates `x` and `y`.
//!
//! Expressions are small immutable trees. They are used for user-provided
//! boundary data and loads, and as the symbolic oracle behind the
//! manufactured solutions: derivatives are taken on the tree and evaluated
//! with the same evaluator that handles user input.
//!
//! Grammar (usual precedence, `^` is right associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 'y' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := 'sin' | 'cos' | 'exp' | 'ln' | 'sqrt'
//! ```

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

/// Parse failure, with the byte column where it was detected.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot parse expression `{source_text}` at column {column}: {message}")]
pub struct ExprError {
    pub source_text: String,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Ln(Expr),
}

/// An expression tree. Cloning is cheap (shared nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn node(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn constant(c: f64) -> Self {
        Self::node(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn x() -> Self {
        Self::node(Node::Var(Var::X))
    }

    pub fn y() -> Self {
        Self::node(Node::Var(Var::Y))
    }

    pub fn var(v: Var) -> Self {
        Self::node(Node::Var(v))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, c: f64) -> bool {
        self.as_const() == Some(c)
    }

    pub fn sin(&self) -> Self {
        match self.as_const() {
            Some(c) => Self::constant(c.sin()),
            None => Self::node(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Self {
        match self.as_const() {
            Some(c) => Self::constant(c.cos()),
            None => Self::node(Node::Cos(self.clone())),
        }
    }

    pub fn exp(&self) -> Self {
        match self.as_const() {
            Some(c) => Self::constant(c.exp()),
            None => Self::node(Node::Exp(self.clone())),
        }
    }

    pub fn ln(&self) -> Self {
        match self.as_const() {
            Some(c) => Self::constant(c.ln()),
            None => Self::node(Node::Ln(self.clone())),
        }
    }

    pub fn pow(&self, exponent: &Expr) -> Self {
        if exponent.is_const(0.0) {
            return Self::constant(1.0);
        }
        if exponent.is_const(1.0) {
            return self.clone();
        }
        match (self.as_const(), exponent.as_const()) {
            (Some(a), Some(b)) => Self::constant(a.powf(b)),
            _ => Self::node(Node::Pow(self.clone(), exponent.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Self {
        self.pow(&Self::constant(n as f64))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(Var::X) => x,
            Node::Var(Var::Y) => y,
            Node::Neg(a) => -a.eval(x, y),
            Node::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Node::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Node::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Node::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Node::Pow(a, b) => {
                let base = a.eval(x, y);
                match b.as_const() {
                    Some(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x, y)),
                }
            }
            Node::Sin(a) => a.eval(x, y).sin(),
            Node::Cos(a) => a.eval(x, y).cos(),
            Node::Exp(a) => a.eval(x, y).exp(),
            Node::Ln(a) => a.eval(x, y).ln(),
        }
    }

    pub fn eval_at(&self, p: [f64; 2]) -> f64 {
        self.eval(p[0], p[1])
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, v: Var) -> Expr {
        match &*self.0 {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => -a.diff(v),
            Node::Add(a, b) => a.diff(v) + b.diff(v),
            Node::Sub(a, b) => a.diff(v) - b.diff(v),
            Node::Mul(a, b) => a.diff(v) * b.clone() + a.clone() * b.diff(v),
            Node::Div(a, b) => {
                (a.diff(v) * b.clone() - a.clone() * b.diff(v)) / b.powi(2)
            }
            Node::Pow(a, b) => match b.as_const() {
                Some(e) => Expr::constant(e) * a.pow(&Expr::constant(e - 1.0)) * a.diff(v),
                None => {
                    // d(a^b) = a^b (b' ln a + b a' / a)
                    self.clone() * (b.diff(v) * a.ln() + b.clone() * a.diff(v) / a.clone())
                }
            },
            Node::Sin(a) => a.cos() * a.diff(v),
            Node::Cos(a) => -(a.sin() * a.diff(v)),
            Node::Exp(a) => self.clone() * a.diff(v),
            Node::Ln(a) => a.diff(v) / a.clone(),
        }
    }

    pub fn dx(&self) -> Expr {
        self.diff(Var::X)
    }

    pub fn dy(&self) -> Expr {
        self.diff(Var::Y)
    }

    /// Replace every occurrence of `v` by `with`.
    pub fn substitute(&self, v: Var, with: &Expr) -> Expr {
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(w) => {
                if *w == v {
                    with.clone()
                } else {
                    self.clone()
                }
            }
            Node::Neg(a) => -a.substitute(v, with),
            Node::Add(a, b) => a.substitute(v, with) + b.substitute(v, with),
            Node::Sub(a, b) => a.substitute(v, with) - b.substitute(v, with),
            Node::Mul(a, b) => a.substitute(v, with) * b.substitute(v, with),
            Node::Div(a, b) => a.substitute(v, with) / b.substitute(v, with),
            Node::Pow(a, b) => a.substitute(v, with).pow(&b.substitute(v, with)),
            Node::Sin(a) => a.substitute(v, with).sin(),
            Node::Cos(a) => a.substitute(v, with).cos(),
            Node::Exp(a) => a.substitute(v, with).exp(),
            Node::Ln(a) => a.substitute(v, with).ln(),
        }
    }

    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match &*self.0 {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(a) => a.clone(),
            _ => Expr::node(Node::Neg(self)),
        }
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::node(Node::Add(self, rhs)),
        }
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), _) if a == 0.0 => -rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::node(Node::Sub(self, rhs)),
        }
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => rhs,
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::node(Node::Mul(self, rhs)),
        }
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a / b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::node(Node::Div(self, rhs)),
        }
    }
}

macro_rules! scalar_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $tr::$m(self, Expr::constant(rhs))
            }
        }
        impl $tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $tr::$m(Expr::constant(self), rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $tr::$m(self.clone(), rhs.clone())
            }
        }
    )*};
}
scalar_ops!(Add add, Sub sub, Mul mul, Div div);

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Node::Var(Var::X) => write!(f, "x"),
            Node::Var(Var::Y) => write!(f, "y"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "{a} * {b}"),
            Node::Div(a, b) => write!(f, "{a} / ({b})"),
            Node::Pow(a, b) => write!(f, "({a})^({b})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Ln(a) => write!(f, "ln({a})"),
        }
    }
}

/// A plane vector field given by two component expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct VecExpr(pub [Expr; 2]);

impl VecExpr {
    pub fn new(a: Expr, b: Expr) -> Self {
        VecExpr([a, b])
    }

    pub fn constant(v: [f64; 2]) -> Self {
        VecExpr([Expr::constant(v[0]), Expr::constant(v[1])])
    }

    pub fn zero() -> Self {
        Self::constant([0.0, 0.0])
    }

    pub fn parse(components: [&str; 2]) -> Result<Self, ExprError> {
        Ok(VecExpr([Expr::parse(components[0])?, Expr::parse(components[1])?]))
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        [self.0[0].eval_at(p), self.0[1].eval_at(p)]
    }

    pub fn substitute(&self, v: Var, with: &Expr) -> Self {
        VecExpr([self.0[0].substitute(v, with), self.0[1].substitute(v, with)])
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError {
            source_text: self.src.to_string(),
            column: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = lhs + self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = lhs * self.unary()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            Ok(base.pow(&exponent))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = &self.src[start..self.pos];
                match word {
                    "x" => Ok(Expr::x()),
                    "y" => Ok(Expr::y()),
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" | "ln" | "sqrt" => {
                        self.expect(b'(')?;
                        let arg = self.expr()?;
                        self.expect(b')')?;
                        Ok(match word {
                            "sin" => arg.sin(),
                            "cos" => arg.cos(),
                            "exp" => arg.exp(),
                            "ln" => arg.ln(),
                            _ => arg.pow(&Expr::constant(0.5)),
                        })
                    }
                    _ => {
                        self.pos = start;
                        Err(self.error(&format!("unknown identifier `{word}`")))
                    }
                }
            }
            Some(c) => Err(self.error(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < b.len() && b[self.pos].is_ascii_digit() {
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>().map(Expr::constant).map_err(|_| {
            self.pos = start;
            self.error(&format!("malformed number `{text}`"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("2*x^2 - sin(pi*y) / 4 + exp(0)").unwrap();
        let v = e.eval(1.5, 0.5);
        assert!((v - (2.0 * 2.25 - 0.25 + 1.0)).abs() < 1e-15);
        assert_eq!(Expr::parse("-x^2").unwrap().eval(3.0, 0.0), -9.0);
        assert_eq!(Expr::parse("2^3^2").unwrap().eval(0.0, 0.0), 512.0);
        assert_eq!(Expr::parse("1.5e2 + .5").unwrap().eval(0.0, 0.0), 150.5);
    }

    #[test]
    fn reports_column() {
        let err = Expr::parse("x + * y").unwrap_err();
        assert_eq!(err.column, 5);
        let err = Expr::parse("foo(x)").unwrap_err();
        assert!(err.message.contains("foo"));
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("x y").is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let e = Expr::parse("sin(pi*x)*cos(2*y) + x^3*y/(1+x^2) + exp(x*y) + (1+x)^(y)").unwrap();
        let (x, y) = (0.37, 0.61);
        let h = 1e-6;
        let fd_x = (e.eval(x + h, y) - e.eval(x - h, y)) / (2.0 * h);
        let fd_y = (e.eval(x, y + h) - e.eval(x, y - h)) / (2.0 * h);
        assert!((e.dx().eval(x, y) - fd_x).abs() < 1e-8);
        assert!((e.dy().eval(x, y) - fd_y).abs() < 1e-8);
    }

    #[test]
    fn substitution() {
        let e = Expr::parse("x*y + y").unwrap();
        let s = e.substitute(Var::Y, &Expr::constant(0.5));
        assert_eq!(s.eval(2.0, 100.0), 1.5);
        assert!((Expr::parse("sin(pi/2)").unwrap().as_const().unwrap() - (PI / 2.0).sin()).abs() < 1e-16);
    }
}
