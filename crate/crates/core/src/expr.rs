//! Small arithmetic expression language for inline coefficients.
//!
//! Grammar: `+ - * / ^`, parentheses, numeric literals, the constant `pi`,
//! variables `t`, `x` (or `x1`, `x2`, ...), `y`, `z` (or `z1`, `z2`, ...) and
//! the functions `exp log sqrt abs sin cos pos neg max min`. `pos(a)` is the
//! positive part and `neg(a)` the negative part `max(-a, 0)`.
//!
//! Expressions can be differentiated symbolically; kinks (`max`, `abs`, ...)
//! use one-sided derivatives.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X(usize),
    Y,
    Z(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Pos,
    Neg,
    /// Heaviside step, 1 for positive arguments and 0 otherwise.
    Step,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
}

/// Variable values for evaluation. Missing coordinates read as 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected token {:?} in '{src}'",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn eval(&self, env: &Env) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => match v {
                Var::T => env.t,
                Var::X(i) => env.x.get(*i).copied().unwrap_or(0.0),
                Var::Y => env.y,
                Var::Z(i) => env.z.get(*i).copied().unwrap_or(0.0),
            },
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Div(a, b) => a.eval(env) / b.eval(env),
            Expr::Pow(a, b) => {
                let base = a.eval(env);
                match b.as_ref() {
                    Expr::Const(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(*c as i32),
                    _ => base.powf(b.eval(env)),
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(env);
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Pos => v.max(0.0),
                    Func::Neg => (-v).max(0.0),
                    Func::Step => {
                        if v > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            Expr::Max(a, b) => a.eval(env).max(b.eval(env)),
            Expr::Min(a, b) => a.eval(env).min(b.eval(env)),
        }
    }

    /// True if the expression mentions `v` anywhere.
    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    /// Largest x or z coordinate index mentioned, plus one.
    pub fn max_index(&self, x: bool) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(Var::X(i)) if x => i + 1,
            Expr::Var(Var::Z(i)) if !x => i + 1,
            Expr::Var(_) => 0,
            Expr::Neg(a) | Expr::Call(_, a) => a.max_index(x),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => a.max_index(x).max(b.max_index(x)),
        }
    }

    /// Symbolic partial derivative with respect to `v`.
    pub fn diff(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return Expr::Const(0.0);
        }
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(w) => Expr::Const(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(v)),
            Expr::Add(a, b) => add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => add(
                mul(a.diff(v), (**b).clone()),
                mul((**a).clone(), b.diff(v)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.diff(v), (**b).clone()),
                    mul((**a).clone(), b.diff(v)),
                );
                div(num, pow((**b).clone(), Expr::Const(2.0)))
            }
            Expr::Pow(a, b) => {
                if let Some(c) = b.as_const() {
                    mul(
                        mul(Expr::Const(c), pow((**a).clone(), Expr::Const(c - 1.0))),
                        a.diff(v),
                    )
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    let term = add(
                        mul(b.diff(v), call(Func::Log, (**a).clone())),
                        div(mul((**b).clone(), a.diff(v)), (**a).clone()),
                    );
                    mul(self.clone(), term)
                }
            }
            Expr::Call(f, a) => {
                let inner = a.diff(v);
                let a = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, a),
                    Func::Log => div(Expr::Const(1.0), a),
                    Func::Sqrt => div(Expr::Const(0.5), call(Func::Sqrt, a)),
                    Func::Abs => sub(
                        call(Func::Step, a.clone()),
                        call(Func::Step, neg(a)),
                    ),
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Pos => call(Func::Step, a),
                    Func::Neg => neg(call(Func::Step, neg(a))),
                    Func::Step => Expr::Const(0.0),
                };
                mul(outer, inner)
            }
            Expr::Max(a, b) => {
                let s = call(Func::Step, sub((**a).clone(), (**b).clone()));
                add(
                    mul(s.clone(), a.diff(v)),
                    mul(sub(Expr::Const(1.0), s), b.diff(v)),
                )
            }
            Expr::Min(a, b) => {
                let s = call(Func::Step, sub((**b).clone(), (**a).clone()));
                add(
                    mul(s.clone(), a.diff(v)),
                    mul(sub(Expr::Const(1.0), s), b.diff(v)),
                )
            }
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x / y),
        (Some(x), _) if x == 0.0 => Expr::Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x.powf(y)),
        (_, Some(y)) if y == 0.0 => Expr::Const(1.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        let e = Expr::Call(f, Box::new(Expr::Const(c)));
        return Expr::Const(e.eval(&Env::default()));
    }
    Expr::Call(f, Box::new(a))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::Y) => write!(f, "y"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::Z(i)) => write!(f, "z{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                    Func::Abs => "abs",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Pos => "pos",
                    Func::Neg => "neg",
                    Func::Step => "step",
                };
                write!(f, "{name}({a})")
            }
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number '{text}'")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => return Err(Error::Expr(format!("unexpected character '{c}'"))),
            };
            out.push(tok);
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Token) -> Result<()> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            other => Err(Error::Expr(format!("expected {tok:?}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Token::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Token::RParen)?;
                    return build_call(&name, args);
                }
                variable(&name)
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn variable(name: &str) -> Result<Expr> {
    let indexed = |prefix: char| -> Option<usize> {
        let rest = name.strip_prefix(prefix)?;
        let i: usize = rest.parse().ok()?;
        (i >= 1).then(|| i - 1)
    };
    let v = match name {
        "t" => Var::T,
        "x" => Var::X(0),
        "y" => Var::Y,
        "z" => Var::Z(0),
        "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
        _ => {
            if let Some(i) = indexed('x') {
                Var::X(i)
            } else if let Some(i) = indexed('z') {
                Var::Z(i)
            } else {
                return Err(Error::Expr(format!("unknown variable '{name}'")));
            }
        }
    };
    Ok(Expr::Var(v))
}

fn build_call(name: &str, mut args: Vec<Expr>) -> Result<Expr> {
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Error::Expr(format!(
                "{name} takes {n} argument(s), got {}",
                args.len()
            )))
        }
    };
    let unary = |f: Func, args: &mut Vec<Expr>| Expr::Call(f, Box::new(args.remove(0)));
    Ok(match name {
        "max" | "min" => {
            arity(2)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            if name == "max" {
                Expr::Max(Box::new(a), Box::new(b))
            } else {
                Expr::Min(Box::new(a), Box::new(b))
            }
        }
        _ => {
            arity(1)?;
            let f = match name {
                "exp" => Func::Exp,
                "log" | "ln" => Func::Log,
                "sqrt" => Func::Sqrt,
                "abs" => Func::Abs,
                "sin" => Func::Sin,
                "cos" => Func::Cos,
                "pos" => Func::Pos,
                "neg" => Func::Neg,
                _ => return Err(Error::Expr(format!("unknown function '{name}'"))),
            };
            unary(f, &mut args)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64, x: f64, y: f64) -> f64 {
        Expr::parse(src).unwrap().eval(&Env {
            t,
            x: &[x],
            y,
            z: &[],
        })
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0, 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(ev("2e-1 * 10", 0.0, 0.0, 0.0), 2.0);
    }

    #[test]
    fn functions_and_variables() {
        assert_eq!(ev("max(40 - x, 0)", 0.0, 36.0, 0.0), 4.0);
        assert_eq!(ev("pos(40 - x)", 0.0, 44.0, 0.0), 0.0);
        assert_eq!(ev("neg(y - x)", 0.0, 2.0, 1.0), 1.0);
        assert!((ev("exp(t) * log(x)", 1.0, std::f64::consts::E, 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("min(y, x1)", 0.0, 3.0, 5.0), 3.0);
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("w").is_err());
        assert!(Expr::parse("max(1)").is_err());
        assert!(Expr::parse("(1").is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let cases = [
            "sin(x) * y^2 + exp(0.3 * y) / (1 + x^2)",
            "sqrt(1 + y^2) * cos(x)",
            "y ^ x",
            "log(2 + sin(y)) - x * y",
        ];
        for src in cases {
            let e = Expr::parse(src).unwrap();
            for var in [Var::X(0), Var::Y] {
                let d = e.diff(var);
                let (x0, y0) = (0.7, 1.3);
                let h = 1e-5;
                let f = |x: f64, y: f64| e.eval(&Env { t: 0.0, x: &[x], y, z: &[] });
                let fd = match var {
                    Var::X(_) => (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h),
                    _ => (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h),
                };
                let an = d.eval(&Env { t: 0.0, x: &[x0], y: y0, z: &[] });
                assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{src}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn simplification_detects_independence() {
        let e = Expr::parse("0.5 * y").unwrap();
        assert!(e.diff(Var::X(0)).is_zero());
        assert_eq!(e.diff(Var::Y).as_const(), Some(0.5));
        assert!(e.diff(Var::Y).diff(Var::Y).is_zero());
    }
}
