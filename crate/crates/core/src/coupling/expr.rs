//! Small closed-form expression language for coupling terms.
//!
//! Expressions combine numeric literals, named coupling parameters (`COP`,
//! `R_DC`, `H0`, `T_REF`, `GAMMA`), qualified signal references
//! (`mg.V_bus`) and the registered admittance map `H(...)` with the four
//! arithmetic operators. Keeping the language closed lets the validator
//! analyze signal dependencies statically.

use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    /// Bare identifier resolved against the coupling parameters.
    Param(String),
    /// `subsystem.signal`
    SignalRef { subsystem: String, signal: String },
    /// `H(arg)` — the registered scalar map.
    Call { func: String, arg: Box<Expr> },
    Neg(Box<Expr>),
    Bin {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Expr {
    /// Every `subsystem.signal` pair referenced anywhere in the expression.
    pub fn signal_refs(&self) -> Vec<(String, String)> {
        let mut refs = Vec::new();
        self.collect_refs(&mut refs);
        refs
    }

    fn collect_refs(&self, out: &mut Vec<(String, String)>) {
        match self {
            Expr::Number(_) | Expr::Param(_) => {}
            Expr::SignalRef { subsystem, signal } => {
                out.push((subsystem.clone(), signal.clone()))
            }
            Expr::Call { arg, .. } => arg.collect_refs(out),
            Expr::Neg(e) => e.collect_refs(out),
            Expr::Bin { lhs, rhs, .. } => {
                lhs.collect_refs(out);
                rhs.collect_refs(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Dot,
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ModelError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' => {
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, col));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, col));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, col));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, col));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, col));
                i += 1;
            }
            '.' if i + 1 < chars.len() && chars[i + 1].is_ascii_alphabetic() => {
                toks.push((Tok::Dot, col));
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let value = text.parse::<f64>().map_err(|_| ModelError::Parse {
                    line: 1,
                    column: start + 1,
                    message: format!("invalid number `{text}`"),
                })?;
                toks.push((Tok::Num(value), start + 1));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), start + 1));
            }
            other => {
                return Err(ModelError::Parse {
                    line: 1,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.src_len + 1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> ModelError {
        ModelError::Parse {
            line: 1,
            column: self.col(),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ModelError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ModelError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ModelError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ModelError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ModelError> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Number(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match self.peek() {
                Some(Tok::Dot) => {
                    self.pos += 1;
                    match self.next() {
                        Some(Tok::Ident(signal)) => Ok(Expr::SignalRef {
                            subsystem: name,
                            signal,
                        }),
                        _ => Err(self.err("expected a signal name after `.`")),
                    }
                }
                Some(Tok::LParen) => {
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)` closing the call")?;
                    Ok(Expr::Call {
                        func: name,
                        arg: Box::new(arg),
                    })
                }
                _ => Ok(Expr::Param(name)),
            },
            Some(_) => {
                self.pos -= 1;
                Err(self.err("expected a number, signal, parameter or `(`"))
            }
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

/// Parses one expression. Column numbers in errors are 1-based offsets into
/// `src`; callers embedding expressions in files add their own line offset.
pub fn parse_expression(src: &str) -> Result<Expr, ModelError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        src_len: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

/// Expression compiled against a fixed slot environment. Parameters are
/// inlined; signal references become slot reads; `H` dispatches to the hook
/// passed at evaluation time.
#[derive(Debug, Clone)]
pub(crate) enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    H(Box<Node>),
}

impl Node {
    pub(crate) fn eval(&self, env: &[f64], h: &dyn Fn(f64) -> f64) -> f64 {
        match self {
            Node::Const(v) => *v,
            Node::Slot(i) => env[*i],
            Node::Neg(e) => -e.eval(env, h),
            Node::Add(a, b) => a.eval(env, h) + b.eval(env, h),
            Node::Sub(a, b) => a.eval(env, h) - b.eval(env, h),
            Node::Mul(a, b) => a.eval(env, h) * b.eval(env, h),
            Node::Div(a, b) => a.eval(env, h) / b.eval(env, h),
            Node::H(e) => h(e.eval(env, h)),
        }
    }
}

pub(crate) fn compile(
    expr: &Expr,
    resolve_signal: &dyn Fn(&str, &str) -> Result<usize, ModelError>,
    resolve_param: &dyn Fn(&str) -> Result<f64, ModelError>,
) -> Result<Node, ModelError> {
    Ok(match expr {
        Expr::Number(v) => Node::Const(*v),
        Expr::Param(name) => Node::Const(resolve_param(name)?),
        Expr::SignalRef { subsystem, signal } => Node::Slot(resolve_signal(subsystem, signal)?),
        Expr::Call { func, arg } => {
            if func != "H" {
                return Err(ModelError::usage(format!(
                    "unknown function `{func}` in coupling expression (only `H` is registered)"
                )));
            }
            Node::H(Box::new(compile(arg, resolve_signal, resolve_param)?))
        }
        Expr::Neg(e) => Node::Neg(Box::new(compile(e, resolve_signal, resolve_param)?)),
        Expr::Bin { op, lhs, rhs } => {
            let l = Box::new(compile(lhs, resolve_signal, resolve_param)?);
            let r = Box::new(compile(rhs, resolve_signal, resolve_param)?);
            match op {
                BinOp::Add => Node::Add(l, r),
                BinOp::Sub => Node::Sub(l, r),
                BinOp::Mul => Node::Mul(l, r),
                BinOp::Div => Node::Div(l, r),
            }
        }
    })
}
