//! Coefficient expressions: a small recursive-descent parser, an AST and a
//! tree-walking evaluator.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-2^2`
//! evaluates to `-4` and `2^-1` to `0.5`. Identifiers are `t`, `x1..xd`,
//! `y1..yd`, the constant `pi` and the functions `sin`, `cos`, `exp`, `abs`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier {0}")]
    UnknownIdentifier(String),
    #[error("function {name} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error in {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X(usize),
    Y(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
        }
    }

    fn arity(self) -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Evaluation point: time, macro coordinate and cell coordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Point {
    pub fn new(t: f64, x: &[f64], y: &[f64]) -> Self {
        let mut p = Point {
            t,
            ..Default::default()
        };
        p.x[..x.len()].copy_from_slice(x);
        p.y[..y.len()].copy_from_slice(y);
        p
    }
}

impl Expr {
    pub fn parse(source: &str, dim: usize) -> Result<Expr, ParseError> {
        let mut parser = Parser {
            src: source.as_bytes(),
            pos: 0,
            dim,
        };
        let e = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(parser.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, p: &Point) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(Var::T) => p.t,
            Expr::Var(Var::X(i)) => p.x[*i],
            Expr::Var(Var::Y(i)) => p.y[*i],
            Expr::Neg(e) => -e.eval(p)?,
            Expr::Binary(op, a, b) => {
                let a = a.eval(p)?;
                let b = b.eval(p)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let r = a.powf(b);
                        if !r.is_finite() {
                            return Err(EvalError::Domain("^".into()));
                        }
                        r
                    }
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(p)?;
                let r = match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                };
                if !r.is_finite() {
                    return Err(EvalError::Domain(f.name().into()));
                }
                r
            }
        };
        Ok(v)
    }

    /// Visits every variable referenced by the tree.
    pub fn uses(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Const(_) | Expr::Pi => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(e) => e.uses(pred),
            Expr::Binary(_, a, b) => a.uses(pred) || b.uses(pred),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(pred)),
        }
    }

    pub fn depends_on_y(&self) -> bool {
        self.uses(&|v| matches!(v, Var::Y(_)))
    }

    pub fn depends_on_x(&self) -> bool {
        self.uses(&|v| matches!(v, Var::X(_)))
    }

    pub fn depends_on_t(&self) -> bool {
        self.uses(&|v| matches!(v, Var::T))
    }
}

/// Canonical form: every compound node is parenthesized.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Y(i)) => write!(f, "y{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
                return Err(self.syntax("malformed exponent"));
            }
        }
        // the slice is ASCII by construction
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number {text}"),
        })?;
        if !value.is_finite() {
            return Err(ParseError::Syntax {
                offset: start,
                message: format!("number {text} is not finite"),
            });
        }
        Ok(Expr::Const(value))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(func) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.syntax("expected '(' after function name"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.syntax("expected ')'"));
            }
            if args.len() != func.arity() {
                return Err(ParseError::Arity {
                    name: name.to_string(),
                    expected: func.arity(),
                    found: args.len(),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        let var = match name.as_bytes() {
            b"pi" => return Ok(Expr::Pi),
            b"t" => Some(Var::T),
            [b'x', d @ b'1'..=b'9'] => Some(Var::X((d - b'1') as usize)),
            [b'y', d @ b'1'..=b'9'] => Some(Var::Y((d - b'1') as usize)),
            _ => None,
        };
        match var {
            Some(Var::X(i)) | Some(Var::Y(i)) if i >= self.dim => {
                Err(ParseError::UnknownIdentifier(name.to_string()))
            }
            Some(v) => Ok(Expr::Var(v)),
            None => Err(ParseError::UnknownIdentifier(name.to_string())),
        }
    }
}
