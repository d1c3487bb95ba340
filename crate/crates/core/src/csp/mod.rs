//! Finite-domain constraint language, evaluation, reified all-solutions
//! solving per transition guard, and the lazily-filled solution cache.
//!
//! Expression semantics follow the usual constraint-modeling conventions:
//! integer division truncates toward zero, and a division or modulo by zero
//! (or an overflow) makes the comparison containing it false. Enumeration
//! labels are collated into a single lexicographic universe shared by all
//! domains, so comparisons are integer comparisons on universe indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use indexmap::IndexMap;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sfa::Guard;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CspError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("type error at byte {position}: {message}")]
    Type { position: usize, message: String },
    #[error("constraint `{0}` is not declared")]
    UnknownConstraint(String),
    #[error("assignment does not cover parameter `{0}`")]
    MissingParam(String),
    #[error("value {value} is outside the domain of `{var}`")]
    DomainViolation { var: String, value: i64 },
    #[error("search space of {size} tuples exceeds the solver cap of {cap}")]
    TupleCapExceeded { size: u128, cap: u128 },
    #[error("cache would exceed its solution cap of {cap}")]
    CacheCapExceeded { cap: u64 },
    #[error("cannot sample from an empty solution pool (guard `{0}`)")]
    EmptyPool(String),
}

/// Union of all enumeration labels across the task's domains, sorted
/// lexicographically and densely indexed; the index is the label's integer
/// value everywhere in the constraint language.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Universe {
    labels: Vec<String>,
}

impl Universe {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        Universe {
            labels: set.into_iter().collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<i64> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .ok()
            .map(|i| i as i64)
    }

    pub fn label_at(&self, index: i64) -> Option<&str> {
        usize::try_from(index)
            .ok()
            .and_then(|i| self.labels.get(i))
            .map(|s| s.as_str())
    }
}

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    /// Parameter reference, by position in the constraint signature.
    Var(usize),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    InSet(Box<Expr>, Vec<i64>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Iff(Box<Expr>, Box<Expr>),
    AllDifferent(Vec<Expr>),
    AllEqual(Vec<Expr>),
}

/// Named constraint: an ordered parameter list and a boolean expression over
/// those parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
}

impl ConstraintDef {
    /// Parse a constraint body. Identifiers resolve to parameters first, then
    /// to enumeration labels of `universe`.
    pub fn parse(
        name: impl Into<String>,
        params: Vec<String>,
        body: &str,
        universe: &Universe,
    ) -> Result<Self, CspError> {
        let expr = parse_body(body, &params, universe)?;
        Ok(ConstraintDef {
            name: name.into(),
            params,
            body: expr,
        })
    }

    /// Truth value under values aligned with the parameter list.
    pub fn eval(&self, values: &[i64]) -> bool {
        debug_assert_eq!(values.len(), self.params.len());
        eval_bool(&self.body, values)
    }

    pub fn eval_assignment(&self, a: &Assignment) -> Result<bool, CspError> {
        let mut values = Vec::with_capacity(self.params.len());
        for p in &self.params {
            values.push(
                *a.get(p)
                    .ok_or_else(|| CspError::MissingParam(p.clone()))?,
            );
        }
        Ok(self.eval(&values))
    }
}

/// Total map from variable names to (universe-resolved) values.
pub type Assignment = BTreeMap<String, i64>;

fn eval_int(e: &Expr, values: &[i64]) -> Option<i64> {
    match e {
        Expr::Int(v) => Some(*v),
        Expr::Var(i) => Some(values[*i]),
        Expr::Arith(op, l, r) => {
            let a = eval_int(l, values)?;
            let b = eval_int(r, values)?;
            match op {
                ArithOp::Add => a.checked_add(b),
                ArithOp::Sub => a.checked_sub(b),
                ArithOp::Mul => a.checked_mul(b),
                ArithOp::Div => a.checked_div(b),
                ArithOp::Mod => a.checked_rem(b),
            }
        }
        _ => unreachable!("type checker admits only integer expressions here"),
    }
}

fn eval_bool(e: &Expr, values: &[i64]) -> bool {
    match e {
        Expr::Bool(b) => *b,
        Expr::Cmp(op, l, r) => match (eval_int(l, values), eval_int(r, values)) {
            // An undefined operand (division by zero, overflow) falsifies the
            // comparison that contains it.
            (Some(a), Some(b)) => match op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
            },
            _ => false,
        },
        Expr::InSet(e, set) => match eval_int(e, values) {
            Some(v) => set.contains(&v),
            None => false,
        },
        Expr::Not(e) => !eval_bool(e, values),
        Expr::And(l, r) => eval_bool(l, values) && eval_bool(r, values),
        Expr::Or(l, r) => eval_bool(l, values) || eval_bool(r, values),
        Expr::Implies(l, r) => !eval_bool(l, values) || eval_bool(r, values),
        Expr::Iff(l, r) => eval_bool(l, values) == eval_bool(r, values),
        Expr::AllDifferent(es) => {
            let mut vals = Vec::with_capacity(es.len());
            for e in es {
                match eval_int(e, values) {
                    Some(v) => vals.push(v),
                    None => return false,
                }
            }
            (0..vals.len()).all(|i| (i + 1..vals.len()).all(|j| vals[i] != vals[j]))
        }
        Expr::AllEqual(es) => {
            let mut vals = Vec::with_capacity(es.len());
            for e in es {
                match eval_int(e, values) {
                    Some(v) => vals.push(v),
                    None => return false,
                }
            }
            vals.windows(2).all(|w| w[0] == w[1])
        }
        _ => unreachable!("type checker admits only boolean expressions here"),
    }
}

// ---------------------------------------------------------------------------
// Body parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum BTok {
    Int(i64),
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    Iff,
    In,
    AllDifferent,
    AllEqual,
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Div,
    Mod,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
}

fn lex_body(text: &str) -> Result<Vec<(BTok, usize)>, CspError> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let tok = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '(' => BTok::LParen,
            ')' => BTok::RParen,
            '[' => BTok::LBracket,
            ']' => BTok::RBracket,
            '{' => BTok::LBrace,
            '}' => BTok::RBrace,
            ',' => BTok::Comma,
            '+' => BTok::Plus,
            '*' => BTok::Star,
            '-' if bytes.get(i + 1) == Some(&b'>') => {
                i += 1;
                BTok::Implies
            }
            '-' => BTok::Minus,
            '/' if bytes.get(i + 1) == Some(&b'\\') => {
                i += 1;
                BTok::And
            }
            '\\' if bytes.get(i + 1) == Some(&b'/') => {
                i += 1;
                BTok::Or
            }
            '=' => BTok::Cmp(CmpOp::Eq),
            '!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                BTok::Cmp(CmpOp::Ne)
            }
            '<' if text[i..].starts_with("<->") => {
                i += 2;
                BTok::Iff
            }
            '<' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                BTok::Cmp(CmpOp::Le)
            }
            '<' => BTok::Cmp(CmpOp::Lt),
            '>' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                BTok::Cmp(CmpOp::Ge)
            }
            '>' => BTok::Cmp(CmpOp::Gt),
            c if c.is_ascii_digit() => {
                let mut end = i;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
                let v: i64 = text[i..end].parse().map_err(|_| CspError::Syntax {
                    position: i,
                    message: "integer literal out of range".into(),
                })?;
                i = end;
                toks.push((BTok::Int(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = i;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                let word = &text[i..end];
                i = end;
                let t = match word {
                    "div" => BTok::Div,
                    "mod" => BTok::Mod,
                    "not" => BTok::Not,
                    "in" => BTok::In,
                    "true" => BTok::True,
                    "false" => BTok::False,
                    "all_different" => BTok::AllDifferent,
                    "all_equal" => BTok::AllEqual,
                    _ => BTok::Ident(word.to_string()),
                };
                toks.push((t, start));
                continue;
            }
            other => {
                return Err(CspError::Syntax {
                    position: i,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        i += 1;
        toks.push((tok, start));
    }
    Ok(toks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ty {
    Int,
    Bool,
}

struct BodyParser<'a> {
    toks: Vec<(BTok, usize)>,
    pos: usize,
    end: usize,
    params: &'a [String],
    universe: &'a Universe,
}

impl<'a> BodyParser<'a> {
    fn peek(&self) -> Option<&BTok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<BTok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: BTok, what: &str) -> Result<(), CspError> {
        if self.peek() == Some(&tok) {
            self.bump();
            Ok(())
        } else {
            Err(CspError::Syntax {
                position: self.here(),
                message: format!("expected {what}"),
            })
        }
    }

    fn type_err(&self, pos: usize, message: impl Into<String>) -> CspError {
        CspError::Type {
            position: pos,
            message: message.into(),
        }
    }

    fn parse_iff(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (lhs, lt) = self.parse_implies()?;
        if self.peek() == Some(&BTok::Iff) {
            self.bump();
            let (rhs, rt) = self.parse_iff()?;
            self.want(Ty::Bool, lt, pos, "<->")?;
            self.want(Ty::Bool, rt, pos, "<->")?;
            return Ok((Expr::Iff(Box::new(lhs), Box::new(rhs)), Ty::Bool));
        }
        Ok((lhs, lt))
    }

    fn parse_implies(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (lhs, lt) = self.parse_or()?;
        if self.peek() == Some(&BTok::Implies) {
            self.bump();
            let (rhs, rt) = self.parse_implies()?;
            self.want(Ty::Bool, lt, pos, "->")?;
            self.want(Ty::Bool, rt, pos, "->")?;
            return Ok((Expr::Implies(Box::new(lhs), Box::new(rhs)), Ty::Bool));
        }
        Ok((lhs, lt))
    }

    fn parse_or(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (mut lhs, mut lt) = self.parse_and()?;
        while self.peek() == Some(&BTok::Or) {
            self.bump();
            let (rhs, rt) = self.parse_and()?;
            self.want(Ty::Bool, lt, pos, "\\/")?;
            self.want(Ty::Bool, rt, pos, "\\/")?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
            lt = Ty::Bool;
        }
        Ok((lhs, lt))
    }

    fn parse_and(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (mut lhs, mut lt) = self.parse_not()?;
        while self.peek() == Some(&BTok::And) {
            self.bump();
            let (rhs, rt) = self.parse_not()?;
            self.want(Ty::Bool, lt, pos, "/\\")?;
            self.want(Ty::Bool, rt, pos, "/\\")?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
            lt = Ty::Bool;
        }
        Ok((lhs, lt))
    }

    fn parse_not(&mut self) -> Result<(Expr, Ty), CspError> {
        if self.peek() == Some(&BTok::Not) {
            let pos = self.here();
            self.bump();
            let (inner, t) = self.parse_not()?;
            self.want(Ty::Bool, t, pos, "not")?;
            return Ok((Expr::Not(Box::new(inner)), Ty::Bool));
        }
        self.parse_cmp()
    }

    fn parse_cmp(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (lhs, lt) = self.parse_sum()?;
        match self.peek() {
            Some(BTok::Cmp(op)) => {
                let op = *op;
                self.bump();
                let (rhs, rt) = self.parse_sum()?;
                self.want(Ty::Int, lt, pos, "comparison")?;
                self.want(Ty::Int, rt, pos, "comparison")?;
                Ok((Expr::Cmp(op, Box::new(lhs), Box::new(rhs)), Ty::Bool))
            }
            Some(BTok::In) => {
                self.bump();
                self.want(Ty::Int, lt, pos, "in")?;
                let set = self.parse_set()?;
                Ok((Expr::InSet(Box::new(lhs), set), Ty::Bool))
            }
            _ => Ok((lhs, lt)),
        }
    }

    fn parse_set(&mut self) -> Result<Vec<i64>, CspError> {
        self.expect(BTok::LBrace, "`{`")?;
        let mut out = Vec::new();
        if self.peek() == Some(&BTok::RBrace) {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(self.parse_value()?);
            match self.bump() {
                Some(BTok::Comma) => continue,
                Some(BTok::RBrace) => break,
                _ => {
                    return Err(CspError::Syntax {
                        position: self.here(),
                        message: "expected `,` or `}`".into(),
                    })
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn parse_value(&mut self) -> Result<i64, CspError> {
        match self.bump() {
            Some(BTok::Int(v)) => Ok(v),
            Some(BTok::Minus) => match self.bump() {
                Some(BTok::Int(v)) => Ok(-v),
                _ => Err(CspError::Syntax {
                    position: self.here(),
                    message: "expected integer after `-`".into(),
                }),
            },
            Some(BTok::Ident(name)) => self
                .universe
                .index_of(&name)
                .ok_or(CspError::UnknownLabel(name)),
            _ => Err(CspError::Syntax {
                position: self.here(),
                message: "expected a set element".into(),
            }),
        }
    }

    fn parse_sum(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (mut lhs, mut lt) = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Some(BTok::Plus) => ArithOp::Add,
                Some(BTok::Minus) => ArithOp::Sub,
                _ => break,
            };
            self.bump();
            let (rhs, rt) = self.parse_term()?;
            self.want(Ty::Int, lt, pos, "arithmetic")?;
            self.want(Ty::Int, rt, pos, "arithmetic")?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
            lt = Ty::Int;
        }
        Ok((lhs, lt))
    }

    fn parse_term(&mut self) -> Result<(Expr, Ty), CspError> {
        let pos = self.here();
        let (mut lhs, mut lt) = self.parse_factor()?;
        loop {
            let op = match self.peek() {
                Some(BTok::Star) => ArithOp::Mul,
                Some(BTok::Div) => ArithOp::Div,
                Some(BTok::Mod) => ArithOp::Mod,
                _ => break,
            };
            self.bump();
            let (rhs, rt) = self.parse_factor()?;
            self.want(Ty::Int, lt, pos, "arithmetic")?;
            self.want(Ty::Int, rt, pos, "arithmetic")?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
            lt = Ty::Int;
        }
        Ok((lhs, lt))
    }

    fn parse_factor(&mut self) -> Result<(Expr, Ty), CspError> {
        let position = self.here();
        match self.bump() {
            Some(BTok::Int(v)) => Ok((Expr::Int(v), Ty::Int)),
            Some(BTok::Minus) => match self.bump() {
                Some(BTok::Int(v)) => Ok((Expr::Int(-v), Ty::Int)),
                _ => Err(CspError::Syntax {
                    position,
                    message: "expected integer after unary `-`".into(),
                }),
            },
            Some(BTok::True) => Ok((Expr::Bool(true), Ty::Bool)),
            Some(BTok::False) => Ok((Expr::Bool(false), Ty::Bool)),
            Some(BTok::Ident(name)) => {
                if let Some(i) = self.params.iter().position(|p| *p == name) {
                    return Ok((Expr::Var(i), Ty::Int));
                }
                if let Some(v) = self.universe.index_of(&name) {
                    return Ok((Expr::Int(v), Ty::Int));
                }
                Err(CspError::UnknownVariable(name))
            }
            Some(BTok::LParen) => {
                let (inner, t) = self.parse_iff()?;
                self.expect(BTok::RParen, "`)`")?;
                Ok((inner, t))
            }
            Some(BTok::AllDifferent) => {
                let args = self.parse_expr_list()?;
                Ok((Expr::AllDifferent(args), Ty::Bool))
            }
            Some(BTok::AllEqual) => {
                let args = self.parse_expr_list()?;
                Ok((Expr::AllEqual(args), Ty::Bool))
            }
            Some(tok) => Err(CspError::Syntax {
                position,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(CspError::Syntax {
                position: self.end,
                message: "unexpected end of input".into(),
            }),
        }
    }

    fn parse_expr_list(&mut self) -> Result<Vec<Expr>, CspError> {
        self.expect(BTok::LParen, "`(`")?;
        self.expect(BTok::LBracket, "`[`")?;
        let mut out = Vec::new();
        if self.peek() == Some(&BTok::RBracket) {
            self.bump();
        } else {
            loop {
                let pos = self.here();
                let (e, t) = self.parse_sum()?;
                self.want(Ty::Int, t, pos, "list element")?;
                out.push(e);
                match self.bump() {
                    Some(BTok::Comma) => continue,
                    Some(BTok::RBracket) => break,
                    _ => {
                        return Err(CspError::Syntax {
                            position: self.here(),
                            message: "expected `,` or `]`".into(),
                        })
                    }
                }
            }
        }
        self.expect(BTok::RParen, "`)`")?;
        Ok(out)
    }

    fn want(&self, expected: Ty, got: Ty, pos: usize, what: &str) -> Result<(), CspError> {
        if expected == got {
            Ok(())
        } else {
            Err(self.type_err(
                pos,
                format!(
                    "{what} expects {} operands",
                    if expected == Ty::Int { "integer" } else { "boolean" }
                ),
            ))
        }
    }
}

fn parse_body(text: &str, params: &[String], universe: &Universe) -> Result<Expr, CspError> {
    let toks = lex_body(text)?;
    let mut p = BodyParser {
        toks,
        pos: 0,
        end: text.len(),
        params,
        universe,
    };
    let (expr, ty) = p.parse_iff()?;
    if p.pos < p.toks.len() {
        return Err(CspError::Syntax {
            position: p.here(),
            message: "trailing input after expression".into(),
        });
    }
    if ty != Ty::Bool {
        return Err(CspError::Type {
            position: 0,
            message: "constraint body must be boolean".into(),
        });
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Constraint system and all-solutions solving
// ---------------------------------------------------------------------------

pub const DEFAULT_TUPLE_CAP: u128 = 10_000_000;

/// The task's variables (with resolved domains), constraints, and label
/// universe. Declaration order is preserved and drives every deterministic
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    variables: IndexMap<String, Vec<i64>>,
    constraints: IndexMap<String, ConstraintDef>,
    universe: Universe,
    tuple_cap: u128,
}

/// All solutions of one guard: assignments over the variables of the
/// guard-relevant constraints, plus the truth values of the other constraints
/// that those variables already determine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolutionPool {
    pub guard_key: String,
    /// Variables covered by the stored assignments, in declaration order.
    pub vars: Vec<String>,
    /// Constraints the guard depends on (the "relevant" ones).
    pub relevant: BTreeSet<String>,
    /// Constraints not in the guard whose parameters are all in `vars`.
    pub determined_free: Vec<String>,
    /// Each solution: values aligned with `vars`, truths aligned with
    /// `determined_free`.
    pub solutions: Vec<(Vec<i64>, Vec<bool>)>,
}

impl SolutionPool {
    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }
}

/// One fully grounded step: a total assignment, all constraint truths, and
/// the relevance flags for constraints and variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampledStep {
    pub assignment: Assignment,
    pub truths: BTreeMap<String, bool>,
    pub constraint_relevance: BTreeMap<String, bool>,
    pub variable_relevance: BTreeMap<String, bool>,
}

impl ConstraintSystem {
    pub fn new(
        variables: IndexMap<String, Vec<i64>>,
        constraints: IndexMap<String, ConstraintDef>,
        universe: Universe,
    ) -> Self {
        ConstraintSystem {
            variables,
            constraints,
            universe,
            tuple_cap: DEFAULT_TUPLE_CAP,
        }
    }

    pub fn with_tuple_cap(mut self, cap: u128) -> Self {
        self.tuple_cap = cap;
        self
    }

    pub fn variables(&self) -> &IndexMap<String, Vec<i64>> {
        &self.variables
    }

    pub fn constraints(&self) -> &IndexMap<String, ConstraintDef> {
        &self.constraints
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn constraint(&self, name: &str) -> Result<&ConstraintDef, CspError> {
        self.constraints
            .get(name)
            .ok_or_else(|| CspError::UnknownConstraint(name.to_string()))
    }

    /// Truth of one constraint under an assignment, with domain checking.
    pub fn eval_constraint(&self, name: &str, a: &Assignment) -> Result<bool, CspError> {
        let c = self.constraint(name)?;
        for p in &c.params {
            let v = a.get(p).ok_or_else(|| CspError::MissingParam(p.clone()))?;
            let domain = self
                .variables
                .get(p)
                .ok_or_else(|| CspError::UnknownVariable(p.clone()))?;
            if !domain.contains(v) {
                return Err(CspError::DomainViolation {
                    var: p.clone(),
                    value: *v,
                });
            }
        }
        c.eval_assignment(a)
    }

    /// Variables mentioned by the constraints in the guard's support, in
    /// declaration order.
    fn relevant_vars(&self, relevant: &BTreeSet<String>) -> Result<Vec<String>, CspError> {
        let mut mentioned: BTreeSet<&str> = BTreeSet::new();
        for name in relevant {
            let c = self.constraint(name)?;
            mentioned.extend(c.params.iter().map(|p| p.as_str()));
        }
        Ok(self
            .variables
            .keys()
            .filter(|v| mentioned.contains(v.as_str()))
            .cloned()
            .collect())
    }

    /// Enumerate every assignment (over the variables of the guard-relevant
    /// constraints) whose induced constraint truths satisfy the guard.
    ///
    /// Backtracking in declaration order; a branch is pruned as soon as the
    /// constraints already decided by the partial assignment rule out every
    /// term of the guard.
    pub fn solve_all(&self, guard: &Guard) -> Result<SolutionPool, CspError> {
        let relevant = guard.support();
        for atom in &relevant {
            self.constraint(atom)?;
        }
        let vars = self.relevant_vars(&relevant)?;
        let mut size: u128 = 1;
        for v in &vars {
            size = size.saturating_mul(self.variables[v].len() as u128);
        }
        if size > self.tuple_cap {
            return Err(CspError::TupleCapExceeded {
                size,
                cap: self.tuple_cap,
            });
        }

        let var_index: HashMap<&str, usize> =
            vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        // Constraints fully contained in `vars`, with parameter positions
        // pre-resolved. `decided_at` is the search depth at which the truth
        // becomes known (one past the last parameter's position).
        struct Local<'a> {
            name: &'a str,
            def: &'a ConstraintDef,
            positions: Vec<usize>,
            decided_at: usize,
            in_guard: bool,
        }
        let mut locals: Vec<Local> = Vec::new();
        for (name, def) in &self.constraints {
            let positions: Option<Vec<usize>> = def
                .params
                .iter()
                .map(|p| var_index.get(p.as_str()).copied())
                .collect();
            if let Some(positions) = positions {
                let decided_at = positions.iter().copied().max().map_or(0, |m| m + 1);
                locals.push(Local {
                    name,
                    def,
                    positions,
                    decided_at,
                    in_guard: relevant.contains(name),
                });
            }
        }
        let determined_free: Vec<String> = locals
            .iter()
            .filter(|l| !l.in_guard)
            .map(|l| l.name.to_string())
            .collect();

        let mut pool = SolutionPool {
            guard_key: guard.to_text(),
            vars: vars.clone(),
            relevant: relevant.clone(),
            determined_free,
            solutions: Vec::new(),
        };

        let domains: Vec<&Vec<i64>> = vars.iter().map(|v| &self.variables[v]).collect();
        let mut values: Vec<i64> = Vec::with_capacity(vars.len());
        let mut truths: BTreeMap<&str, bool> = BTreeMap::new();

        fn descend<'a>(
            depth: usize,
            domains: &[&Vec<i64>],
            locals: &[Local<'a>],
            guard: &Guard,
            values: &mut Vec<i64>,
            truths: &mut BTreeMap<&'a str, bool>,
            pool: &mut SolutionPool,
        ) {
            // Evaluate constraints that have just become fully assigned.
            let decided: Vec<(&str, bool)> = locals
                .iter()
                .filter(|l| l.decided_at == depth)
                .map(|l| {
                    let args: Vec<i64> = l.positions.iter().map(|&i| values[i]).collect();
                    (l.name, l.def.eval(&args))
                })
                .collect();
            for (name, truth) in &decided {
                truths.insert(name, *truth);
            }
            let viable = guard.feasible_under(|atom| truths.get(atom).copied());
            if viable {
                if depth == domains.len() {
                    if guard
                        .eval(|atom| truths.get(atom).copied())
                        .unwrap_or(false)
                    {
                        let free: Vec<bool> = pool
                            .determined_free
                            .iter()
                            .map(|n| truths[n.as_str()])
                            .collect();
                        pool.solutions.push((values.clone(), free));
                    }
                } else {
                    for &v in domains[depth] {
                        values.push(v);
                        descend(depth + 1, domains, locals, guard, values, truths, pool);
                        values.pop();
                    }
                }
            }
            for (name, _) in &decided {
                truths.remove(name);
            }
        }

        descend(0, &domains, &locals, guard, &mut values, &mut truths, &mut pool);
        Ok(pool)
    }

    /// Draw one solution uniformly, assign every variable not mentioned by a
    /// guard-relevant constraint uniformly from its domain, and derive all
    /// constraint truths and relevance flags.
    pub fn sample_from_pool<R: Rng + ?Sized>(
        &self,
        pool: &SolutionPool,
        rng: &mut R,
    ) -> Result<SampledStep, CspError> {
        if pool.solutions.is_empty() {
            return Err(CspError::EmptyPool(pool.guard_key.clone()));
        }
        let (values, _) = &pool.solutions[rng.random_range(0..pool.solutions.len())];
        let mut assignment: Assignment = pool
            .vars
            .iter()
            .cloned()
            .zip(values.iter().copied())
            .collect();
        for (var, domain) in &self.variables {
            if !assignment.contains_key(var) {
                let v = domain[rng.random_range(0..domain.len())];
                assignment.insert(var.clone(), v);
            }
        }
        let mut truths = BTreeMap::new();
        let mut constraint_relevance = BTreeMap::new();
        for (name, def) in &self.constraints {
            truths.insert(name.clone(), def.eval_assignment(&assignment)?);
            constraint_relevance.insert(name.clone(), pool.relevant.contains(name));
        }
        let relevant_vars: BTreeSet<&str> = pool
            .relevant
            .iter()
            .flat_map(|n| self.constraints[n].params.iter().map(|p| p.as_str()))
            .collect();
        let variable_relevance = self
            .variables
            .keys()
            .map(|v| (v.clone(), relevant_vars.contains(v.as_str())))
            .collect();
        Ok(SampledStep {
            assignment,
            truths,
            constraint_relevance,
            variable_relevance,
        })
    }
}

// ---------------------------------------------------------------------------
// Solution cache
// ---------------------------------------------------------------------------

/// Monotone cache counters.
#[derive(Debug, Default, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub pools: u64,
    pub solutions: u64,
}

/// Concurrent memo table of solution pools keyed by canonical guard text.
///
/// A miss is filled exactly once; other requesters of the same key block on
/// the fill, requesters of other keys proceed independently.
#[derive(Default)]
pub struct SolutionCache {
    pools: Mutex<HashMap<String, Arc<OnceLock<Result<Arc<SolutionPool>, CspError>>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    stored: AtomicU64,
    solution_cap: u64,
}

impl SolutionCache {
    pub fn new() -> Self {
        SolutionCache {
            solution_cap: u64::MAX,
            ..Default::default()
        }
    }

    /// Cap on the total number of stored solutions across all pools.
    pub fn with_solution_cap(cap: u64) -> Self {
        SolutionCache {
            solution_cap: cap,
            ..Default::default()
        }
    }

    pub fn get(
        &self,
        system: &ConstraintSystem,
        guard: &Guard,
    ) -> Result<Arc<SolutionPool>, CspError> {
        let key = guard.to_text();
        let cell = {
            let mut map = self.pools.lock().expect("cache lock");
            map.entry(key).or_default().clone()
        };
        let mut filled = false;
        let result = cell.get_or_init(|| {
            filled = true;
            let pool = system.solve_all(guard)?;
            let added = pool.solutions.len() as u64;
            let stored = self.stored.fetch_add(added, Ordering::Relaxed) + added;
            if stored > self.solution_cap {
                return Err(CspError::CacheCapExceeded {
                    cap: self.solution_cap,
                });
            }
            Ok(Arc::new(pool))
        });
        if filled {
            self.misses.fetch_add(1, Ordering::Relaxed);
        } else {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        result.clone()
    }

    pub fn stats(&self) -> CacheStats {
        let map = self.pools.lock().expect("cache lock");
        let pools = map
            .values()
            .filter(|c| matches!(c.get(), Some(Ok(_))))
            .count() as u64;
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            pools,
            solutions: self.stored.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests;
