//! User-supplied φ: a small expression language over p1, p2, p3 with
//! forward-mode dual numbers for the gradient.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter
//! than unary minus):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'p1' | 'p2' | 'p3' | 'pi' | func '(' expr ')'
//!        | 'hypdist' '(' num ',' num ',' num ')' | '(' expr ')'
//! ```

use cmc_core::prescribed::{hypdist_with_grad, PrescribedFunction};
use cmc_core::{Error, HyperbolicPoint, Result, Vec3};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Atanh,
}

impl Func {
    const ALL: [(Func, &'static str); 7] =
        [(Func::Exp, "exp"), (Func::Log, "log"), (Func::Sqrt, "sqrt"), (Func::Sin, "sin"), (Func::Cos, "cos"), (Func::Tanh, "tanh"), (Func::Atanh, "atanh")];

    fn name(self) -> &'static str {
        Func::ALL.iter().find(|(f, _)| *f == self).unwrap().1
    }

    fn lookup(s: &str) -> Option<Func> {
        Func::ALL.iter().find(|(_, n)| *n == s).map(|(f, _)| *f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    /// Hyperbolic distance from p to a fixed anchor.
    HypDist([f64; 3]),
}

/// Printed form: binary operations fully parenthesized, numbers in shortest
/// round-trip notation, so that parsing the output gives back the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "p{}", i + 1),
            Expr::Neg(e) => write!(f, "(-({e}))"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::HypDist(c) => write!(f, "hypdist({:?}, {:?}, {:?})", c[0], c[1], c[2]),
        }
    }
}

/// Value and gradient with respect to (p1, p2, p3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub g: Vec3,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, g: Vec3::zeros() }
    }

    /// Chain rule for a scalar function with derivative `d` at `self.v`.
    fn chain(self, v: f64, d: f64) -> Self {
        Dual { v, g: self.g * d }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, 1.0 - t * t)
    }
    pub fn atanh(self) -> Self {
        self.chain(self.v.atanh(), 1.0 / (1.0 - self.v * self.v))
    }

    pub fn pow(self, e: Dual) -> Self {
        // constant integer exponents stay defined for negative bases
        if e.g == Vec3::zeros() {
            let n = e.v;
            let v = self.v.powf(n);
            let d = if n == 0.0 { 0.0 } else { n * self.v.powf(n - 1.0) };
            return self.chain(v, d);
        }
        let v = self.v.powf(e.v);
        Dual { v, g: self.g * (e.v * self.v.powf(e.v - 1.0)) + e.g * (v * self.v.ln()) }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, g: self.g + o.g }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, g: self.g - o.g }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, g: self.g * o.v + o.g * self.v }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, g: (self.g * o.v - o.g * self.v) / (o.v * o.v) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, g: -self.g }
    }
}

impl Expr {
    pub fn eval(&self, p: Vec3) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => p[*i],
            Expr::Neg(e) => -e.eval(p),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(p), b.eval(p));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let x = e.eval(p);
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tanh => x.tanh(),
                    Func::Atanh => x.atanh(),
                }
            }
            Expr::HypDist(c) => hypdist_with_grad(p, Vec3::from(*c)).0,
        }
    }

    pub fn eval_dual(&self, p: Vec3) -> Dual {
        match self {
            Expr::Num(v) => Dual::constant(*v),
            Expr::Var(i) => {
                let mut g = Vec3::zeros();
                g[*i] = 1.0;
                Dual { v: p[*i], g }
            }
            Expr::Neg(e) => -e.eval_dual(p),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval_dual(p), b.eval_dual(p));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.pow(b),
                }
            }
            Expr::Call(f, e) => {
                let x = e.eval_dual(p);
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tanh => x.tanh(),
                    Func::Atanh => x.atanh(),
                }
            }
            Expr::HypDist(c) => {
                let (v, g) = hypdist_with_grad(p, Vec3::from(*c));
                Dual { v, g }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

fn syntax(pos: usize, msg: impl fmt::Display) -> Error {
    Error::Invalid(format!("syntax error at column {}: {msg}", pos + 1))
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent: e or E, optional sign, digits
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let end = if i < chars.len() { chars[i].0 } else { text.len() };
            let s = &text[pos..end];
            let v: f64 = s.parse().map_err(|_| syntax(chars[start].0, format!("bad number '{s}'")))?;
            out.push((Tok::Num(v), pos));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let end = if i < chars.len() { chars[i].0 } else { text.len() };
            out.push((Tok::Ident(text[pos..end].to_string()), pos));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Sym(c), pos));
            i += 1;
        } else {
            return Err(syntax(pos, format!("unexpected character '{c}'")));
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.next() {
            (Tok::Sym(s), _) if s == c => Ok(()),
            (t, p) => Err(syntax(p, format!("expected '{c}', found {}", describe(&t)))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Sym(c @ ('+' | '-')) = *self.peek() {
            self.next();
            let rhs = self.term()?;
            lhs = Expr::Bin(if c == '+' { BinOp::Add } else { BinOp::Sub }, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Sym(c @ ('*' | '/')) = *self.peek() {
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Bin(if c == '*' { BinOp::Mul } else { BinOp::Div }, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Sym('-') {
            self.next();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Sym('^') {
            self.next();
            let e = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn signed_number(&mut self) -> Result<f64> {
        let neg = if *self.peek() == Tok::Sym('-') {
            self.next();
            true
        } else {
            false
        };
        match self.next() {
            (Tok::Num(v), _) => Ok(if neg { -v } else { v }),
            (t, p) => Err(syntax(p, format!("hypdist takes numeric literals, found {}", describe(&t)))),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, pos) = self.next();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "p1" => Ok(Expr::Var(0)),
                "p2" => Ok(Expr::Var(1)),
                "p3" => Ok(Expr::Var(2)),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "hypdist" => {
                    self.expect('(')?;
                    let a = self.signed_number()?;
                    self.expect(',')?;
                    let b = self.signed_number()?;
                    self.expect(',')?;
                    let c = self.signed_number()?;
                    self.expect(')')?;
                    if !(c > 0.0) {
                        return Err(syntax(pos, "hypdist anchor must lie in the half-space (third coordinate > 0)"));
                    }
                    Ok(Expr::HypDist([a, b, c]))
                }
                other => match Func::lookup(other) {
                    Some(f) => {
                        self.expect('(')?;
                        let e = self.expr()?;
                        self.expect(')')?;
                        Ok(Expr::Call(f, Box::new(e)))
                    }
                    None => Err(Error::Invalid(format!("unknown identifier '{other}' at column {}", pos + 1))),
                },
            },
            t => Err(syntax(pos, format!("unexpected {}", describe(&t)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Sym(c) => format!("'{c}'"),
        Tok::End => "end of input".into(),
    }
}

pub fn parse_expr(text: &str) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Invalid("empty expression".into()));
    }
    let mut p = Parser { toks: lex(text)?, at: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.pos(), format!("unexpected {}", describe(p.peek()))));
    }
    Ok(e)
}

/// A parsed φ, usable wherever a prescribed function is expected.
#[derive(Clone, Debug)]
pub struct PhiExpression {
    pub ast: Expr,
    pub source: String,
}

impl PhiExpression {
    /// Rejects expressions that are not finite (with finite gradient) at
    /// every probe point.
    pub fn check_probes(&self, probes: &[HyperbolicPoint]) -> Result<()> {
        for q in probes {
            let d = self.ast.eval_dual(q.vec());
            if !d.v.is_finite() || !d.g.iter().all(|x| x.is_finite()) {
                return Err(Error::Invalid(format!("φ = {} is not finite at probe point ({}, {}, {})", self.source, q.p1, q.p2, q.p3)));
            }
        }
        Ok(())
    }
}

pub fn parse_phi(text: &str) -> Result<PhiExpression> {
    Ok(PhiExpression { ast: parse_expr(text)?, source: text.trim().to_string() })
}

impl PrescribedFunction for PhiExpression {
    fn value(&self, p: Vec3) -> f64 {
        self.ast.eval(p)
    }
    fn gradient(&self, p: Vec3) -> Option<Vec3> {
        Some(self.ast.eval_dual(p).g)
    }
    fn descriptor(&self) -> String {
        self.ast.to_string()
    }
}
