//! Vector-field component expressions.
//!
//! Grammar (whitespace is ignored):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('^' exponent)*
//! exponent:= ['-'] INT | '(' ['-'] INT ')'
//! atom    := NUMBER | 'x'INDEX | FUNC '(' sum ')' | '(' sum ')'
//! FUNC    := sin | cos | exp | tanh
//! ```
//!
//! Exponents are integers so derivatives stay closed-form. `-x1^2` parses
//! as `-(x1^2)` and `x1^2^3` as `(x1^2)^3`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state coordinate: `Var(0)` is `x1`.
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "tanh" => Some(UnaryOp::Tanh),
            _ => None,
        }
    }
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Parses `text` as an expression over `x1..x{dim}`.
pub fn parse(text: &str, dim: usize) -> Result<Expr> {
    Expr::parse(text, dim)
}

impl Expr {
    pub fn parse(text: &str, dim: usize) -> Result<Expr> {
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, pos: 0, dim };
        let expr = parser.sum()?;
        match parser.peek() {
            (Tok::End, _) => Ok(expr),
            (tok, offset) => Err(Error::Syntax {
                offset,
                message: format!("unexpected {}", tok.describe()),
            }),
        }
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    /// Largest zero-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => x.get(*i).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "point has {} coordinates, expression uses x{}",
                    x.len(),
                    i + 1
                ))
            }),
            Expr::Unary(op, a) => {
                let v = a.eval(x)?;
                Ok(match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Tanh => v.tanh(),
                })
            }
            Expr::Binary(op, a, b) => {
                let p = a.eval(x)?;
                let q = b.eval(x)?;
                match op {
                    BinaryOp::Add => Ok(p + q),
                    BinaryOp::Sub => Ok(p - q),
                    BinaryOp::Mul => Ok(p * q),
                    BinaryOp::Div => {
                        if q == 0.0 {
                            Err(Error::Domain(format!("division by zero in {self}")))
                        } else {
                            Ok(p / q)
                        }
                    }
                }
            }
            Expr::Pow(a, n) => {
                let v = a.eval(x)?;
                if *n < 0 && v == 0.0 {
                    return Err(Error::Domain(format!("zero raised to {n} in {self}")));
                }
                Ok(v.powi(*n))
            }
        }
    }

    /// Exact partial derivative with respect to the zero-based coordinate `var`.
    ///
    /// Only trivial constant folding is applied, so the result may be a larger
    /// tree than a hand-simplified derivative.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                match op {
                    UnaryOp::Neg => neg(da),
                    UnaryOp::Sin => mul(unary(UnaryOp::Cos, a), da),
                    UnaryOp::Cos => neg(mul(unary(UnaryOp::Sin, a), da)),
                    UnaryOp::Exp => mul(unary(UnaryOp::Exp, a), da),
                    UnaryOp::Tanh => {
                        let t2 = Expr::Pow(Box::new(unary(UnaryOp::Tanh, a)), 2);
                        mul(sub(Expr::Const(1.0), t2), da)
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                match op {
                    BinaryOp::Add => add(da, db),
                    BinaryOp::Sub => sub(da, db),
                    BinaryOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinaryOp::Div => {
                        if da.is_zero() && db.is_zero() {
                            return Expr::Const(0.0);
                        }
                        let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
                        Expr::Binary(
                            BinaryOp::Div,
                            Box::new(num),
                            Box::new(Expr::Pow(b.clone(), 2)),
                        )
                    }
                }
            }
            Expr::Pow(a, n) => {
                let da = a.diff(var);
                if *n == 0 || da.is_zero() {
                    return Expr::Const(0.0);
                }
                let base = if *n == 1 {
                    Expr::Const(1.0)
                } else {
                    mul(Expr::Const(*n as f64), Expr::Pow(a.clone(), n - 1))
                };
                mul(base, da)
            }
        }
    }
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        a => unary(UnaryOp::Neg, a),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p + q),
        (a, b) if a.is_zero() => b,
        (a, b) if b.is_zero() => a,
        (a, b) => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p - q),
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => neg(b),
        (a, b) => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(p), Expr::Const(q)) => Expr::Const(p * q),
        (a, _) if a.is_zero() => Expr::Const(0.0),
        (_, b) if b.is_zero() => Expr::Const(0.0),
        (Expr::Const(p), b) if p == 1.0 => b,
        (a, Expr::Const(q)) if q == 1.0 => a,
        (a, b) => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

/// Prints fully parenthesized so that `parse(print(e))` is the same function.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", c.abs())
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, n) if *n < 0 => write!(f, "({a}^({n}))"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
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
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("operator `{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(Error::Syntax {
                        offset: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((tok, start));
            i += c.len_utf8();
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> (Tok, usize) {
        self.tokens[self.pos].clone()
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.peek();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let (tok, offset) = self.bump();
        if tok == want {
            Ok(())
        } else {
            Err(Error::Syntax {
                offset,
                message: format!("expected {}, found {}", want.describe(), tok.describe()),
            })
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek().0 {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.atom()?;
        while self.peek().0 == Tok::Op('^') {
            self.bump();
            let n = self.exponent()?;
            base = Expr::Pow(Box::new(base), n);
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32> {
        let parenthesized = self.peek().0 == Tok::LParen;
        if parenthesized {
            self.bump();
        }
        let negative = self.peek().0 == Tok::Op('-');
        if negative {
            self.bump();
        }
        let (tok, offset) = self.bump();
        let n = match tok {
            Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
            other => {
                return Err(Error::Syntax {
                    offset,
                    message: format!("exponent must be an integer, found {}", other.describe()),
                })
            }
        };
        if parenthesized {
            self.expect(Tok::RParen)?;
        }
        Ok(if negative { -n } else { n })
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, offset) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(op) = UnaryOp::from_name(&name) {
                    self.expect(Tok::LParen)?;
                    let arg = self.sum()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Unary(op, Box::new(arg)));
                }
                match variable_index(&name) {
                    Some(index) if index >= 1 && index <= self.dim => Ok(Expr::Var(index - 1)),
                    Some(index) => Err(Error::VariableOutOfRange {
                        index,
                        dim: self.dim,
                        offset,
                    }),
                    None => Err(Error::UnknownIdentifier { name, offset }),
                }
            }
            other => Err(Error::Syntax {
                offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}
