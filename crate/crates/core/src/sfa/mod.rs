//! Deterministic, complete symbolic automata over constraint atoms.
//!
//! Transition labels are [`Guard`]s: propositional formulas over the atom
//! set, so an automaton over `k` atoms condenses a DFA over the `2^k`
//! valuation alphabet. [`compile`] turns a temporal formula into the minimal
//! such automaton; [`check_equiv`] is the exhaustive oracle tying it back to
//! the trace semantics of [`crate::ltlf`].

mod compile;
mod guard;

pub use compile::{compile, compile_with_cap, DEFAULT_STATE_CAP};
pub use guard::Guard;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ltlf::{CompiledEval, Formula, FormulaError, Trace};

pub type StateId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SfaError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("guard contains a temporal operator: {0}")]
    TemporalGuard(String),
    #[error("guard ranges over too many atoms ({0})")]
    GuardTooWide(usize),
    #[error("atom `{0}` is undefined in the valuation")]
    UndefinedAtom(String),
    #[error("state {state} has {matches} guards true under valuation {valuation:#b}")]
    NotDeterministic {
        state: StateId,
        valuation: u32,
        matches: usize,
    },
    #[error("state {state} has {matches} guards true under the given valuation")]
    AmbiguousStep { state: StateId, matches: usize },
    #[error("formula needs more than {cap} automaton states")]
    StateCapExceeded { cap: usize },
    #[error("automaton ranges over too many atoms ({0}) for exhaustive expansion")]
    TooManyAtoms(usize),
    #[error("equivalence check would enumerate more than {cap} traces")]
    EquivCapExceeded { cap: usize },
    #[error("malformed automaton: {0}")]
    Malformed(String),
    #[error("invalid automaton JSON: {0}")]
    Json(String),
}

/// Outcome of running a trace: the visited states (`trace length + 1`,
/// starting at the initial state) and whether the final state accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub states: Vec<StateId>,
    pub accepted: bool,
}

/// Deterministic complete symbolic automaton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sfa {
    atoms: Vec<String>,
    initial: StateId,
    accepting: BTreeSet<StateId>,
    transitions: Vec<Vec<(Guard, StateId)>>,
}

impl Sfa {
    pub fn new(
        atoms: Vec<String>,
        initial: StateId,
        accepting: BTreeSet<StateId>,
        transitions: Vec<Vec<(Guard, StateId)>>,
    ) -> Result<Self, SfaError> {
        let n = transitions.len();
        if initial >= n {
            return Err(SfaError::Malformed(format!(
                "initial state {initial} out of range"
            )));
        }
        if let Some(&s) = accepting.iter().find(|&&s| s >= n) {
            return Err(SfaError::Malformed(format!(
                "accepting state {s} out of range"
            )));
        }
        for (from, edges) in transitions.iter().enumerate() {
            for (guard, to) in edges {
                if *to >= n {
                    return Err(SfaError::Malformed(format!(
                        "transition {from} -> {to} out of range"
                    )));
                }
                for atom in guard.support() {
                    if !atoms.contains(&atom) {
                        return Err(SfaError::Malformed(format!(
                            "guard atom `{atom}` not in the automaton alphabet"
                        )));
                    }
                }
            }
        }
        Ok(Sfa {
            atoms,
            initial,
            accepting,
            transitions,
        })
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn state_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn accepting(&self) -> &BTreeSet<StateId> {
        &self.accepting
    }

    pub fn is_accepting(&self, s: StateId) -> bool {
        self.accepting.contains(&s)
    }

    pub fn transitions_from(&self, s: StateId) -> &[(Guard, StateId)] {
        &self.transitions[s]
    }

    /// A sink only transitions to itself.
    pub fn is_sink(&self, s: StateId) -> bool {
        self.transitions[s].iter().all(|(_, to)| *to == s)
    }

    pub fn guard_between(&self, from: StateId, to: StateId) -> Option<&Guard> {
        self.transitions[from]
            .iter()
            .find(|(_, t)| *t == to)
            .map(|(g, _)| g)
    }

    /// Successor of `s` under a valuation. Exactly one guard must fire.
    pub fn step(
        &self,
        s: StateId,
        lookup: impl Fn(&str) -> Option<bool>,
    ) -> Result<StateId, SfaError> {
        let mut succ = None;
        let mut matches = 0;
        for (guard, to) in &self.transitions[s] {
            if guard.eval(&lookup)? {
                matches += 1;
                succ = Some(*to);
            }
        }
        match (succ, matches) {
            (Some(to), 1) => Ok(to),
            _ => Err(SfaError::AmbiguousStep { state: s, matches }),
        }
    }

    /// Run a trace from the initial state.
    pub fn run(&self, tr: &Trace) -> Result<RunOutcome, SfaError> {
        let mut states = Vec::with_capacity(tr.len() + 1);
        let mut current = self.initial;
        states.push(current);
        for step in tr.steps() {
            current = self.step(current, |a| step.get(a).copied())?;
            states.push(current);
        }
        Ok(RunOutcome {
            accepted: self.is_accepting(current),
            states,
        })
    }

    /// Expand the condensed guards into an explicit transition table over the
    /// `2^k` valuation alphabet, checking determinism and completeness.
    pub fn expand(&self) -> Result<Vec<Vec<StateId>>, SfaError> {
        let k = self.atoms.len();
        if k > 20 {
            return Err(SfaError::TooManyAtoms(k));
        }
        let mut table = Vec::with_capacity(self.state_count());
        for (state, edges) in self.transitions.iter().enumerate() {
            let mut row = Vec::with_capacity(1 << k);
            for mask in 0..(1u32 << k) {
                let lookup = |a: &str| {
                    self.atoms
                        .iter()
                        .position(|x| x == a)
                        .map(|i| mask >> i & 1 == 1)
                };
                let mut succ = None;
                let mut matches = 0;
                for (guard, to) in edges {
                    if guard.eval(lookup)? {
                        matches += 1;
                        succ = Some(*to);
                    }
                }
                match (succ, matches) {
                    (Some(to), 1) => row.push(to),
                    _ => {
                        return Err(SfaError::NotDeterministic {
                            state,
                            valuation: mask,
                            matches,
                        })
                    }
                }
            }
            table.push(row);
        }
        Ok(table)
    }

    /// Check the structural invariant: per state, the guards partition the
    /// valuation space (their disjunction is a tautology, pairwise
    /// conjunctions unsatisfiable).
    pub fn check_deterministic_complete(&self) -> Result<(), SfaError> {
        self.expand().map(|_| ())
    }

    /// Language-preserving minimization: partition refinement over the
    /// expanded alphabet, guards re-condensed afterwards. States of the
    /// result are renumbered breadth-first from the initial state.
    pub fn minimize(&self) -> Result<Sfa, SfaError> {
        let table = self.expand()?;
        let accepting: Vec<bool> = (0..self.state_count())
            .map(|s| self.is_accepting(s))
            .collect();
        build_minimal(self.atoms.clone(), self.initial, &accepting, &table)
    }

    /// Stable JSON export (`states`, `atoms`, `initial`, `accepting`,
    /// `transitions: [{from, guard, to}]`).
    pub fn to_json(&self) -> String {
        let mut transitions = Vec::new();
        for (from, edges) in self.transitions.iter().enumerate() {
            let mut edges: Vec<&(Guard, StateId)> = edges.iter().collect();
            edges.sort_by_key(|(_, to)| *to);
            for (guard, to) in edges {
                transitions.push(JsonTransition {
                    from,
                    guard: guard.to_text(),
                    to: *to,
                });
            }
        }
        let doc = JsonSfa {
            states: self.state_count(),
            atoms: self.atoms.clone(),
            initial: self.initial,
            accepting: self.accepting.iter().copied().collect(),
            transitions,
        };
        serde_json::to_string_pretty(&doc).expect("automaton serializes")
    }

    pub fn from_json(text: &str) -> Result<Sfa, SfaError> {
        let doc: JsonSfa = serde_json::from_str(text).map_err(|e| SfaError::Json(e.to_string()))?;
        let known: BTreeSet<String> = doc.atoms.iter().cloned().collect();
        let mut transitions: Vec<Vec<(Guard, StateId)>> = vec![Vec::new(); doc.states];
        for t in &doc.transitions {
            if t.from >= doc.states {
                return Err(SfaError::Malformed(format!(
                    "transition from unknown state {}",
                    t.from
                )));
            }
            let guard = Guard::parse(&t.guard, &known)?;
            transitions[t.from].push((guard, t.to));
        }
        Sfa::new(
            doc.atoms,
            doc.initial,
            doc.accepting.into_iter().collect(),
            transitions,
        )
    }

    /// GraphViz export with a stable ordering; accepting states are doubled
    /// circles and the initial state is marked by an entry arrow.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph sfa {\n  rankdir=LR;\n  __init [shape=point];\n");
        for s in 0..self.state_count() {
            let shape = if self.is_accepting(s) {
                "doublecircle"
            } else {
                "circle"
            };
            out.push_str(&format!("  {s} [shape={shape}];\n"));
        }
        out.push_str(&format!("  __init -> {};\n", self.initial));
        for (from, edges) in self.transitions.iter().enumerate() {
            let mut edges: Vec<&(Guard, StateId)> = edges.iter().collect();
            edges.sort_by_key(|(_, to)| *to);
            for (guard, to) in edges {
                let label = guard.to_text().replace('\\', "\\\\").replace('"', "\\\"");
                out.push_str(&format!("  {from} -> {to} [label=\"{label}\"];\n"));
            }
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Serialize, Deserialize)]
struct JsonSfa {
    states: usize,
    atoms: Vec<String>,
    initial: usize,
    accepting: Vec<usize>,
    transitions: Vec<JsonTransition>,
}

#[derive(Serialize, Deserialize)]
struct JsonTransition {
    from: usize,
    guard: String,
    to: usize,
}

/// Quotient an explicit DFA by language equivalence and rebuild condensed
/// guards. `table[s][mask]` is the successor of `s` under valuation `mask`.
pub(crate) fn build_minimal(
    atoms: Vec<String>,
    initial: StateId,
    accepting: &[bool],
    table: &[Vec<StateId>],
) -> Result<Sfa, SfaError> {
    let n = table.len();
    let alphabet = table.first().map(|r| r.len()).unwrap_or(1);

    // Drop states unreachable from the initial state before refinement.
    let mut reachable = vec![false; n];
    let mut queue = VecDeque::from([initial]);
    reachable[initial] = true;
    while let Some(s) = queue.pop_front() {
        for &t in &table[s] {
            if !reachable[t] {
                reachable[t] = true;
                queue.push_back(t);
            }
        }
    }

    // Moore-style partition refinement: split classes by the class signature
    // of their successors until stable.
    let mut class: Vec<usize> = accepting.iter().map(|&a| usize::from(a)).collect();
    loop {
        let mut next_ids: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        let mut next: Vec<usize> = vec![0; n];
        for s in 0..n {
            if !reachable[s] {
                continue;
            }
            let sig: Vec<usize> = table[s].iter().map(|&t| class[t]).collect();
            let key = (class[s], sig);
            let fresh = next_ids.len();
            let id = *next_ids.entry(key).or_insert(fresh);
            next[s] = id;
        }
        let changed = (0..n).any(|s| reachable[s] && next[s] != class[s]);
        let count = next_ids.len();
        class = next;
        if !changed || count == n {
            break;
        }
    }

    // Renumber classes breadth-first from the initial class, in valuation
    // order, so the output is canonical.
    let class_succ = |c: usize| -> Vec<usize> {
        let rep = (0..n).find(|&s| reachable[s] && class[s] == c).unwrap();
        table[rep].iter().map(|&t| class[t]).collect()
    };
    let mut order: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::from([class[initial]]);
    order.insert(class[initial], 0);
    while let Some(c) = queue.pop_front() {
        for succ in class_succ(c) {
            let fresh = order.len();
            if let std::collections::btree_map::Entry::Vacant(e) = order.entry(succ) {
                e.insert(fresh);
                queue.push_back(succ);
            }
        }
    }

    let m = order.len();
    let mut new_accepting = BTreeSet::new();
    let mut new_table: Vec<Vec<StateId>> = vec![vec![0; alphabet]; m];
    for s in 0..n {
        if !reachable[s] {
            continue;
        }
        let Some(&id) = order.get(&class[s]) else {
            continue;
        };
        if accepting[s] {
            new_accepting.insert(id);
        }
        for (mask, &t) in table[s].iter().enumerate() {
            new_table[id][mask] = order[&class[t]];
        }
    }

    let mut transitions: Vec<Vec<(Guard, StateId)>> = Vec::with_capacity(m);
    for row in &new_table {
        let mut by_succ: BTreeMap<StateId, Vec<u32>> = BTreeMap::new();
        for (mask, &t) in row.iter().enumerate() {
            by_succ.entry(t).or_default().push(mask as u32);
        }
        transitions.push(
            by_succ
                .into_iter()
                .map(|(t, masks)| (Guard::from_minterms(&atoms, &masks), t))
                .collect(),
        );
    }
    Sfa::new(atoms, 0, new_accepting, transitions)
}

const EQUIV_TRACE_CAP: usize = 5_000_000;

/// Exhaustively compare automaton acceptance with the trace semantics of `f`
/// for every trace of length `1..=max_len` over the union atom set.
pub fn check_equiv(a: &Sfa, f: &Formula, max_len: usize) -> Result<bool, SfaError> {
    let mut atoms: BTreeSet<String> = a.atoms().iter().cloned().collect();
    atoms.extend(f.atoms());
    let atoms: Vec<String> = atoms.into_iter().collect();
    let k = atoms.len();
    if k > 20 {
        return Err(SfaError::TooManyAtoms(k));
    }
    let alphabet = 1usize << k;
    let mut total = 0usize;
    let mut layer = 1usize;
    for _ in 0..max_len {
        layer = layer.saturating_mul(alphabet);
        total = total.saturating_add(layer);
        if total > EQUIV_TRACE_CAP {
            return Err(SfaError::EquivCapExceeded {
                cap: EQUIV_TRACE_CAP,
            });
        }
    }

    // Per-state successor table over the union alphabet.
    let mut table: Vec<Vec<StateId>> = Vec::with_capacity(a.state_count());
    for s in 0..a.state_count() {
        let mut row = Vec::with_capacity(alphabet);
        for mask in 0..alphabet as u32 {
            let lookup = |name: &str| {
                atoms
                    .iter()
                    .position(|x| x == name)
                    .map(|i| mask >> i & 1 == 1)
            };
            row.push(a.step(s, lookup)?);
        }
        table.push(row);
    }

    let compiled = CompiledEval::new(f, &atoms);
    let mut prefix: Vec<u32> = Vec::with_capacity(max_len);
    let mut states: Vec<StateId> = Vec::with_capacity(max_len);

    fn dfs(
        a: &Sfa,
        table: &[Vec<StateId>],
        compiled: &CompiledEval,
        prefix: &mut Vec<u32>,
        states: &mut Vec<StateId>,
        current: StateId,
        max_len: usize,
    ) -> bool {
        if prefix.len() == max_len {
            return true;
        }
        let alphabet = table[0].len() as u32;
        for mask in 0..alphabet {
            let succ = table[current][mask as usize];
            prefix.push(mask);
            states.push(succ);
            let ok = a.is_accepting(succ) == compiled.eval(prefix)
                && dfs(a, table, compiled, prefix, states, succ, max_len);
            prefix.pop();
            states.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    Ok(dfs(
        a,
        &table,
        &compiled,
        &mut prefix,
        &mut states,
        a.initial(),
        max_len,
    ))
}
