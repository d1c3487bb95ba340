//! Finite-trace temporal formulas: abstract syntax, parser, negation normal
//! form, and the reference trace-semantics evaluator.
//!
//! The evaluator is the correctness oracle for the automaton compiler in
//! [`crate::sfa`]: an automaton is correct iff it accepts exactly the traces
//! the evaluator accepts.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Temporal formula over named atoms.
///
/// `Next` requires a successor step to exist; `WeakNext` is also true at the
/// final step. `Until` uses the strict reading: the witness step need not
/// satisfy the left operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    WeakNext(Box<Formula>),
    Globally(Box<Formula>),
    Finally(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Release(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(name: impl Into<String>) -> Self {
        Formula::Atom(name.into())
    }
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }
    pub fn and(l: Formula, r: Formula) -> Self {
        Formula::And(Box::new(l), Box::new(r))
    }
    pub fn or(l: Formula, r: Formula) -> Self {
        Formula::Or(Box::new(l), Box::new(r))
    }
    pub fn implies(l: Formula, r: Formula) -> Self {
        Formula::Implies(Box::new(l), Box::new(r))
    }
    pub fn iff(l: Formula, r: Formula) -> Self {
        Formula::Iff(Box::new(l), Box::new(r))
    }
    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }
    pub fn weak_next(f: Formula) -> Self {
        Formula::WeakNext(Box::new(f))
    }
    pub fn globally(f: Formula) -> Self {
        Formula::Globally(Box::new(f))
    }
    pub fn finally(f: Formula) -> Self {
        Formula::Finally(Box::new(f))
    }
    pub fn until(l: Formula, r: Formula) -> Self {
        Formula::Until(Box::new(l), Box::new(r))
    }
    pub fn release(l: Formula, r: Formula) -> Self {
        Formula::Release(Box::new(l), Box::new(r))
    }

    /// Atom names appearing in the formula, sorted.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a) => {
                out.insert(a.clone());
            }
            Formula::Not(f)
            | Formula::Next(f)
            | Formula::WeakNext(f)
            | Formula::Globally(f)
            | Formula::Finally(f) => f.collect_atoms(out),
            Formula::And(l, r)
            | Formula::Or(l, r)
            | Formula::Implies(l, r)
            | Formula::Iff(l, r)
            | Formula::Until(l, r)
            | Formula::Release(l, r) => {
                l.collect_atoms(out);
                r.collect_atoms(out);
            }
        }
    }

    /// ASCII rendering; [`parse_formula`] accepts it back verbatim.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        self.print(&mut s, 0, false);
        s
    }

    // Precedence levels, loosest first: <-> (1), -> (2), | (3), & (4),
    // U/R (5), unary (6). `min` is the loosest level allowed without parens.
    fn print(&self, out: &mut String, min: u8, unicode: bool) {
        let prec = self.precedence();
        if prec < min {
            out.push('(');
            self.print(out, 0, unicode);
            out.push(')');
            return;
        }
        match self {
            Formula::True => out.push_str(if unicode { "⊤" } else { "true" }),
            Formula::False => out.push_str(if unicode { "⊥" } else { "false" }),
            Formula::Atom(a) => out.push_str(a),
            Formula::Not(f) => {
                out.push_str(if unicode { "¬" } else { "!" });
                f.print(out, 6, unicode);
            }
            Formula::Next(f) => {
                out.push_str(if unicode { "◯" } else { "X " });
                f.print(out, 6, unicode);
            }
            Formula::WeakNext(f) => {
                out.push_str(if unicode { "●" } else { "WX " });
                f.print(out, 6, unicode);
            }
            Formula::Globally(f) => {
                out.push_str(if unicode { "□" } else { "G " });
                f.print(out, 6, unicode);
            }
            Formula::Finally(f) => {
                out.push_str(if unicode { "◊" } else { "F " });
                f.print(out, 6, unicode);
            }
            Formula::Until(l, r) => {
                // Right-associative: the left operand needs the next level up.
                l.print(out, 6, unicode);
                out.push_str(" U ");
                r.print(out, 5, unicode);
            }
            Formula::Release(l, r) => {
                l.print(out, 6, unicode);
                out.push_str(" R ");
                r.print(out, 5, unicode);
            }
            Formula::And(l, r) => {
                l.print(out, 4, unicode);
                out.push_str(if unicode { " ∧ " } else { " & " });
                r.print(out, 5, unicode);
            }
            Formula::Or(l, r) => {
                l.print(out, 3, unicode);
                out.push_str(if unicode { " ∨ " } else { " | " });
                r.print(out, 4, unicode);
            }
            Formula::Implies(l, r) => {
                l.print(out, 3, unicode);
                out.push_str(if unicode { " → " } else { " -> " });
                r.print(out, 2, unicode);
            }
            Formula::Iff(l, r) => {
                l.print(out, 2, unicode);
                out.push_str(if unicode { " ↔ " } else { " <-> " });
                r.print(out, 1, unicode);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Iff(..) => 1,
            Formula::Implies(..) => 2,
            Formula::Or(..) => 3,
            Formula::And(..) => 4,
            Formula::Until(..) | Formula::Release(..) => 5,
            _ => 6,
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.print(&mut s, 0, true);
        f.write_str(&s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown atom `{name}` at byte {position}")]
    UnknownAtom { name: String, position: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("trace must contain at least one step")]
    EmptyTrace,
    #[error("atom `{0}` is undefined at step {1}")]
    UndefinedAtom(String, usize),
}

/// Truth assignment for the atoms at one step.
pub type Valuation = std::collections::BTreeMap<String, bool>;

/// Non-empty sequence of valuations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    steps: Vec<Valuation>,
}

impl Trace {
    pub fn new(steps: Vec<Valuation>) -> Result<Self, EvalError> {
        if steps.is_empty() {
            return Err(EvalError::EmptyTrace);
        }
        Ok(Trace { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> &[Valuation] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &Valuation {
        &self.steps[t]
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Implies,
    Iff,
    Next,
    WeakNext,
    Globally,
    Finally,
    Until,
    Release,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut chars = text.char_indices().peekable();
    while let Some((pos, c)) = chars.next() {
        let tok = match c {
            ' ' | '\t' | '\n' | '\r' => continue,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '!' | '¬' | '~' => Tok::Not,
            '&' | '∧' => {
                if matches!(chars.peek(), Some((_, '&'))) {
                    chars.next();
                }
                Tok::And
            }
            '|' | '∨' => {
                if matches!(chars.peek(), Some((_, '|'))) {
                    chars.next();
                }
                Tok::Or
            }
            '/' if matches!(chars.peek(), Some((_, '\\'))) => {
                chars.next();
                Tok::And
            }
            '\\' if matches!(chars.peek(), Some((_, '/'))) => {
                chars.next();
                Tok::Or
            }
            '-' if matches!(chars.peek(), Some((_, '>'))) => {
                chars.next();
                Tok::Implies
            }
            '→' => Tok::Implies,
            '<' if text[pos..].starts_with("<->") => {
                chars.next();
                chars.next();
                Tok::Iff
            }
            '↔' => Tok::Iff,
            '◯' | '○' => Tok::Next,
            '●' => Tok::WeakNext,
            '□' => Tok::Globally,
            '◊' | '♦' => Tok::Finally,
            '⊤' => Tok::True,
            '⊥' => Tok::False,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = pos + 1;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                    chars.next();
                }
                match &text[pos..end] {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "not" => Tok::Not,
                    "X" => Tok::Next,
                    "WX" => Tok::WeakNext,
                    "G" => Tok::Globally,
                    "F" => Tok::Finally,
                    "U" => Tok::Until,
                    "R" => Tok::Release,
                    ident => Tok::Ident(ident.to_string()),
                }
            }
            other => {
                return Err(FormulaError::Syntax {
                    position: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        toks.push((tok, pos));
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    known: &'a BTreeSet<String>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> FormulaError {
        FormulaError::Syntax {
            position: self.here(),
            message: message.into(),
        }
    }

    fn parse_iff(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.parse_implies()?;
        if matches!(self.peek(), Some(Tok::Iff)) {
            self.bump();
            let rhs = self.parse_iff()?;
            return Ok(Formula::iff(lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_implies(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.parse_or()?;
        if matches!(self.peek(), Some(Tok::Implies)) {
            self.bump();
            let rhs = self.parse_implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.parse_and()?;
        while matches!(self.peek(), Some(Tok::Or)) {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.parse_until()?;
        while matches!(self.peek(), Some(Tok::And)) {
            self.bump();
            let rhs = self.parse_until()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_until(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.parse_unary()?;
        match self.peek() {
            Some(Tok::Until) => {
                self.bump();
                let rhs = self.parse_until()?;
                Ok(Formula::until(lhs, rhs))
            }
            Some(Tok::Release) => {
                self.bump();
                let rhs = self.parse_until()?;
                Ok(Formula::release(lhs, rhs))
            }
            _ => Ok(lhs),
        }
    }

    fn parse_unary(&mut self) -> Result<Formula, FormulaError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.bump();
                Ok(Formula::not(self.parse_unary()?))
            }
            Some(Tok::Next) => {
                self.bump();
                Ok(Formula::next(self.parse_unary()?))
            }
            Some(Tok::WeakNext) => {
                self.bump();
                Ok(Formula::weak_next(self.parse_unary()?))
            }
            Some(Tok::Globally) => {
                self.bump();
                Ok(Formula::globally(self.parse_unary()?))
            }
            Some(Tok::Finally) => {
                self.bump();
                Ok(Formula::finally(self.parse_unary()?))
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Formula, FormulaError> {
        let position = self.here();
        match self.bump() {
            Some(Tok::True) => Ok(Formula::True),
            Some(Tok::False) => Ok(Formula::False),
            Some(Tok::Ident(name)) => {
                if !self.known.contains(&name) {
                    return Err(FormulaError::UnknownAtom { name, position });
                }
                Ok(Formula::Atom(name))
            }
            Some(Tok::LParen) => {
                let inner = self.parse_iff()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(FormulaError::Syntax {
                        position: self.here().min(self.end),
                        message: "expected `)`".into(),
                    }),
                }
            }
            Some(tok) => Err(FormulaError::Syntax {
                position,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

/// Parse the ASCII (or Unicode) surface syntax into a [`Formula`].
///
/// Every atom must be a member of `known_atoms`. Operator precedence,
/// tightest first: `! X WX G F`, then `U R` (right-associative), `&`, `|`,
/// `->`, `<->`.
pub fn parse_formula(
    text: &str,
    known_atoms: &BTreeSet<String>,
) -> Result<Formula, FormulaError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        known: known_atoms,
    };
    let f = p.parse_iff()?;
    if p.pos < p.toks.len() {
        return Err(p.err("trailing input after formula"));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Negation normal form
// ---------------------------------------------------------------------------

/// Rewrite into negation normal form over the core `{!, &, |, X, WX, U, R}`:
/// negations pushed onto atoms, `-> <-> G F` eliminated. Preserves trace
/// semantics; already-normalized input comes back structurally unchanged.
pub fn to_nnf(f: &Formula) -> Formula {
    match f {
        Formula::True | Formula::False | Formula::Atom(_) => f.clone(),
        Formula::Not(inner) => nnf_neg(inner),
        Formula::And(l, r) => Formula::and(to_nnf(l), to_nnf(r)),
        Formula::Or(l, r) => Formula::or(to_nnf(l), to_nnf(r)),
        Formula::Implies(l, r) => Formula::or(nnf_neg(l), to_nnf(r)),
        Formula::Iff(l, r) => Formula::or(
            Formula::and(to_nnf(l), to_nnf(r)),
            Formula::and(nnf_neg(l), nnf_neg(r)),
        ),
        Formula::Next(inner) => Formula::next(to_nnf(inner)),
        Formula::WeakNext(inner) => Formula::weak_next(to_nnf(inner)),
        // G f == false R f, F f == true U f.
        Formula::Globally(inner) => Formula::release(Formula::False, to_nnf(inner)),
        Formula::Finally(inner) => Formula::until(Formula::True, to_nnf(inner)),
        Formula::Until(l, r) => Formula::until(to_nnf(l), to_nnf(r)),
        Formula::Release(l, r) => Formula::release(to_nnf(l), to_nnf(r)),
    }
}

fn nnf_neg(f: &Formula) -> Formula {
    match f {
        Formula::True => Formula::False,
        Formula::False => Formula::True,
        Formula::Atom(_) => Formula::not(f.clone()),
        Formula::Not(inner) => to_nnf(inner),
        Formula::And(l, r) => Formula::or(nnf_neg(l), nnf_neg(r)),
        Formula::Or(l, r) => Formula::and(nnf_neg(l), nnf_neg(r)),
        Formula::Implies(l, r) => Formula::and(to_nnf(l), nnf_neg(r)),
        Formula::Iff(l, r) => Formula::or(
            Formula::and(to_nnf(l), nnf_neg(r)),
            Formula::and(nnf_neg(l), to_nnf(r)),
        ),
        // Finite-trace duality: !X f == WX !f and !WX f == X !f.
        Formula::Next(inner) => Formula::weak_next(nnf_neg(inner)),
        Formula::WeakNext(inner) => Formula::next(nnf_neg(inner)),
        Formula::Globally(inner) => Formula::until(Formula::True, nnf_neg(inner)),
        Formula::Finally(inner) => Formula::release(Formula::False, nnf_neg(inner)),
        Formula::Until(l, r) => Formula::release(nnf_neg(l), nnf_neg(r)),
        Formula::Release(l, r) => Formula::until(nnf_neg(l), nnf_neg(r)),
    }
}

// ---------------------------------------------------------------------------
// Trace evaluation
// ---------------------------------------------------------------------------

/// Evaluate `f` on `tr` under the inductive finite-trace semantics.
///
/// The whole trace satisfies the formula iff its first step does. Every atom
/// of the formula must be defined at every step.
pub fn eval_trace(f: &Formula, tr: &Trace) -> Result<bool, EvalError> {
    let atoms = f.atoms();
    for (t, step) in tr.steps().iter().enumerate() {
        for a in &atoms {
            if !step.contains_key(a) {
                return Err(EvalError::UndefinedAtom(a.clone(), t));
            }
        }
    }
    Ok(eval_positions(f, tr)[0])
}

// One satisfaction bit per position, computed backwards via the standard
// expansion laws (f U g == g | (f & X(f U g)), etc.). `tr` is non-empty.
fn eval_positions(f: &Formula, tr: &Trace) -> Vec<bool> {
    let n = tr.len();
    match f {
        Formula::True => vec![true; n],
        Formula::False => vec![false; n],
        Formula::Atom(a) => tr.steps().iter().map(|v| v[a]).collect(),
        Formula::Not(g) => {
            let mut v = eval_positions(g, tr);
            v.iter_mut().for_each(|b| *b = !*b);
            v
        }
        Formula::And(l, r) => zip_with(eval_positions(l, tr), eval_positions(r, tr), |a, b| a && b),
        Formula::Or(l, r) => zip_with(eval_positions(l, tr), eval_positions(r, tr), |a, b| a || b),
        Formula::Implies(l, r) => {
            zip_with(eval_positions(l, tr), eval_positions(r, tr), |a, b| !a || b)
        }
        Formula::Iff(l, r) => zip_with(eval_positions(l, tr), eval_positions(r, tr), |a, b| a == b),
        Formula::Next(g) => {
            let c = eval_positions(g, tr);
            (0..n).map(|t| t + 1 < n && c[t + 1]).collect()
        }
        Formula::WeakNext(g) => {
            let c = eval_positions(g, tr);
            (0..n).map(|t| t + 1 >= n || c[t + 1]).collect()
        }
        Formula::Globally(g) => {
            let c = eval_positions(g, tr);
            let mut v = vec![false; n];
            for t in (0..n).rev() {
                v[t] = c[t] && (t + 1 >= n || v[t + 1]);
            }
            v
        }
        Formula::Finally(g) => {
            let c = eval_positions(g, tr);
            let mut v = vec![false; n];
            for t in (0..n).rev() {
                v[t] = c[t] || (t + 1 < n && v[t + 1]);
            }
            v
        }
        Formula::Until(l, r) => {
            let a = eval_positions(l, tr);
            let b = eval_positions(r, tr);
            let mut v = vec![false; n];
            for t in (0..n).rev() {
                v[t] = b[t] || (a[t] && t + 1 < n && v[t + 1]);
            }
            v
        }
        Formula::Release(l, r) => {
            let a = eval_positions(l, tr);
            let b = eval_positions(r, tr);
            let mut v = vec![false; n];
            for t in (0..n).rev() {
                v[t] = b[t] && (a[t] || t + 1 >= n || v[t + 1]);
            }
            v
        }
    }
}

fn zip_with(a: Vec<bool>, b: Vec<bool>, f: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

// ---------------------------------------------------------------------------
// Compiled evaluator over bitmask valuations
// ---------------------------------------------------------------------------

/// Formula flattened into a postorder node array, evaluated over traces given
/// as atom bitmasks. Used by the exhaustive equivalence oracle, where
/// millions of prefixes are scored.
pub struct CompiledEval {
    nodes: Vec<CNode>,
    atom_order: Vec<String>,
    // scratch: one row per node, one column per position
    buf: std::cell::RefCell<Vec<bool>>,
}

enum CNode {
    True,
    False,
    Atom(usize),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Implies(usize, usize),
    Iff(usize, usize),
    Next(usize),
    WeakNext(usize),
    Globally(usize),
    Finally(usize),
    Until(usize, usize),
    Release(usize, usize),
}

impl CompiledEval {
    /// `atom_order[i]` is the atom reported by bit `i` of a valuation mask.
    pub fn new(f: &Formula, atom_order: &[String]) -> Self {
        let mut nodes = Vec::new();
        Self::flatten(f, atom_order, &mut nodes);
        CompiledEval {
            nodes,
            atom_order: atom_order.to_vec(),
            buf: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn atom_order(&self) -> &[String] {
        &self.atom_order
    }

    fn flatten(f: &Formula, atoms: &[String], nodes: &mut Vec<CNode>) -> usize {
        let node = match f {
            Formula::True => CNode::True,
            Formula::False => CNode::False,
            Formula::Atom(a) => {
                let idx = atoms
                    .iter()
                    .position(|x| x == a)
                    .expect("atom missing from evaluation order");
                CNode::Atom(idx)
            }
            Formula::Not(g) => CNode::Not(Self::flatten(g, atoms, nodes)),
            Formula::Next(g) => CNode::Next(Self::flatten(g, atoms, nodes)),
            Formula::WeakNext(g) => CNode::WeakNext(Self::flatten(g, atoms, nodes)),
            Formula::Globally(g) => CNode::Globally(Self::flatten(g, atoms, nodes)),
            Formula::Finally(g) => CNode::Finally(Self::flatten(g, atoms, nodes)),
            Formula::And(l, r) => {
                CNode::And(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
            Formula::Or(l, r) => {
                CNode::Or(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
            Formula::Implies(l, r) => {
                CNode::Implies(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
            Formula::Iff(l, r) => {
                CNode::Iff(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
            Formula::Until(l, r) => {
                CNode::Until(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
            Formula::Release(l, r) => {
                CNode::Release(Self::flatten(l, atoms, nodes), Self::flatten(r, atoms, nodes))
            }
        };
        nodes.push(node);
        nodes.len() - 1
    }

    /// Satisfaction of the trace `masks` (bit `i` of each mask = atom `i`).
    pub fn eval(&self, masks: &[u32]) -> bool {
        let n = masks.len();
        assert!(n > 0);
        let rows = self.nodes.len();
        let mut buf = self.buf.borrow_mut();
        buf.clear();
        buf.resize(rows * n, false);
        for (i, node) in self.nodes.iter().enumerate() {
            // Children precede parents in postorder; split at the current row
            // so child rows can be read while the current one is written.
            let (done, rest) = buf.split_at_mut(i * n);
            let row = &mut rest[..n];
            let col = |j: usize| &done[j * n..(j + 1) * n];
            match node {
                CNode::True => row.iter_mut().for_each(|b| *b = true),
                CNode::False => {}
                CNode::Atom(bit) => {
                    for t in 0..n {
                        row[t] = masks[t] >> bit & 1 == 1;
                    }
                }
                CNode::Not(c) => {
                    let c = col(*c);
                    for t in 0..n {
                        row[t] = !c[t];
                    }
                }
                CNode::And(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in 0..n {
                        row[t] = l[t] && r[t];
                    }
                }
                CNode::Or(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in 0..n {
                        row[t] = l[t] || r[t];
                    }
                }
                CNode::Implies(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in 0..n {
                        row[t] = !l[t] || r[t];
                    }
                }
                CNode::Iff(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in 0..n {
                        row[t] = l[t] == r[t];
                    }
                }
                CNode::Next(c) => {
                    let c = col(*c);
                    for t in 0..n {
                        row[t] = t + 1 < n && c[t + 1];
                    }
                }
                CNode::WeakNext(c) => {
                    let c = col(*c);
                    for t in 0..n {
                        row[t] = t + 1 >= n || c[t + 1];
                    }
                }
                CNode::Globally(c) => {
                    let c = col(*c);
                    for t in (0..n).rev() {
                        let nxt = t + 1 >= n || row[t + 1];
                        row[t] = c[t] && nxt;
                    }
                }
                CNode::Finally(c) => {
                    let c = col(*c);
                    for t in (0..n).rev() {
                        let nxt = t + 1 < n && row[t + 1];
                        row[t] = c[t] || nxt;
                    }
                }
                CNode::Until(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in (0..n).rev() {
                        let nxt = t + 1 < n && row[t + 1];
                        row[t] = r[t] || (l[t] && nxt);
                    }
                }
                CNode::Release(l, r) => {
                    let (l, r) = (col(*l), col(*r));
                    for t in (0..n).rev() {
                        let nxt = t + 1 >= n || row[t + 1];
                        row[t] = r[t] && (l[t] || nxt);
                    }
                }
            }
        }
        buf[(rows - 1) * n]
    }
}
