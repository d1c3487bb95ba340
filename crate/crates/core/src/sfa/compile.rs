//! Temporal-formula-to-automaton compiler.
//!
//! Derivative construction: a state is the obligation the remaining suffix
//! must satisfy, represented as a canonical antichain of sets of "temporal
//! tokens" (the bodies of next-operators plus until/release subformulas),
//! together with an acceptance bit recording whether the prefix consumed so
//! far already satisfies the formula. Reading a valuation rewrites each token
//! one step (strong next demands a successor, weak next is also discharged at
//! the trace end), which both yields the successor obligation and decides the
//! successor's acceptance bit. The reachable machine is then minimized over
//! the expanded valuation alphabet and guards are re-condensed.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::ltlf::{to_nnf, Formula};

use super::{build_minimal, Sfa, SfaError, StateId};

/// Default bound on the number of states explored before compilation gives
/// up; conversion is worst-case doubly exponential in the formula size.
pub const DEFAULT_STATE_CAP: usize = 4096;

pub fn compile(f: &Formula) -> Result<Sfa, SfaError> {
    compile_with_cap(f, DEFAULT_STATE_CAP)
}

pub fn compile_with_cap(f: &Formula, cap: usize) -> Result<Sfa, SfaError> {
    let nnf = to_nnf(f);
    let atoms: Vec<String> = nnf.atoms().into_iter().collect();
    if atoms.len() > 16 {
        return Err(SfaError::TooManyAtoms(atoms.len()));
    }

    let mut tokens: Vec<Formula> = Vec::new();
    let mut token_ids: HashMap<Formula, u32> = HashMap::new();
    intern_token(&nnf, &mut tokens, &mut token_ids);
    collect_tokens(&nnf, &mut tokens, &mut token_ids);
    let root = token_ids[&nnf];

    let initial = State {
        obligation: Antichain(vec![BTreeSet::from([root])]),
        accepting: empty_trace_sat(&nnf),
    };

    let alphabet = 1u32 << atoms.len();
    let mut ids: HashMap<State, StateId> = HashMap::new();
    let mut order: Vec<State> = Vec::new();
    let mut table: Vec<Vec<StateId>> = Vec::new();
    ids.insert(initial.clone(), 0);
    order.push(initial);
    let mut queue = VecDeque::from([0usize]);
    while let Some(id) = queue.pop_front() {
        let state = order[id].clone();
        let mut row = Vec::with_capacity(alphabet as usize);
        for mask in 0..alphabet {
            let succ = step(&state, mask, &atoms, &tokens, &token_ids);
            let fresh = order.len();
            let succ_id = *ids.entry(succ.clone()).or_insert_with(|| {
                order.push(succ);
                queue.push_back(fresh);
                fresh
            });
            if order.len() > cap {
                return Err(SfaError::StateCapExceeded { cap });
            }
            row.push(succ_id);
        }
        table.resize(order.len(), Vec::new());
        table[id] = row;
    }

    let accepting: Vec<bool> = order.iter().map(|s| s.accepting).collect();
    build_minimal(atoms, 0, &accepting, &table)
}

/// Obligations that reappear behind a next step: next/weak-next bodies and
/// the until/release subformulas themselves.
fn collect_tokens(
    f: &Formula,
    tokens: &mut Vec<Formula>,
    ids: &mut HashMap<Formula, u32>,
) {
    match f {
        Formula::True | Formula::False | Formula::Atom(_) | Formula::Not(_) => {}
        Formula::And(l, r) | Formula::Or(l, r) => {
            collect_tokens(l, tokens, ids);
            collect_tokens(r, tokens, ids);
        }
        Formula::Next(g) | Formula::WeakNext(g) => {
            intern_token(g, tokens, ids);
            collect_tokens(g, tokens, ids);
        }
        Formula::Until(l, r) | Formula::Release(l, r) => {
            intern_token(f, tokens, ids);
            collect_tokens(l, tokens, ids);
            collect_tokens(r, tokens, ids);
        }
        _ => unreachable!("input is in negation normal form"),
    }
}

fn intern_token(f: &Formula, tokens: &mut Vec<Formula>, ids: &mut HashMap<Formula, u32>) {
    if !ids.contains_key(f) {
        ids.insert(f.clone(), tokens.len() as u32);
        tokens.push(f.clone());
    }
}

/// Classical satisfaction over the empty trace: atoms and strong next fail,
/// negated atoms and weak next hold, until fails, release holds.
fn empty_trace_sat(f: &Formula) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(_) => false,
        Formula::Not(_) => true,
        Formula::And(l, r) => empty_trace_sat(l) && empty_trace_sat(r),
        Formula::Or(l, r) => empty_trace_sat(l) || empty_trace_sat(r),
        Formula::Next(_) => false,
        Formula::WeakNext(_) => true,
        Formula::Until(_, _) => false,
        Formula::Release(_, _) => true,
        _ => unreachable!("input is in negation normal form"),
    }
}

/// Canonical antichain of minimal sets: the unique representation of a
/// monotone Boolean function over tokens (disjunction of conjunctions).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Antichain<T: Ord + Clone>(Vec<BTreeSet<T>>);

impl<T: Ord + Clone> Antichain<T> {
    fn truth() -> Self {
        Antichain(vec![BTreeSet::new()])
    }

    fn falsity() -> Self {
        Antichain(Vec::new())
    }

    fn unit(t: T) -> Self {
        Antichain(vec![BTreeSet::from([t])])
    }

    fn normalize(mut sets: Vec<BTreeSet<T>>) -> Self {
        sets.sort();
        sets.dedup();
        let mut minimal: Vec<BTreeSet<T>> = Vec::new();
        for s in sets {
            if !minimal.iter().any(|m| m.is_subset(&s)) {
                minimal.retain(|m| !s.is_subset(m));
                minimal.push(s);
            }
        }
        minimal.sort();
        Antichain(minimal)
    }

    fn or(&self, other: &Self) -> Self {
        let mut sets = self.0.clone();
        sets.extend(other.0.iter().cloned());
        Self::normalize(sets)
    }

    fn and(&self, other: &Self) -> Self {
        let mut sets = Vec::with_capacity(self.0.len() * other.0.len());
        for a in &self.0 {
            for b in &other.0 {
                let mut s = a.clone();
                s.extend(b.iter().cloned());
                sets.push(s);
            }
        }
        Self::normalize(sets)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    obligation: Antichain<u32>,
    accepting: bool,
}

/// Signed token: `(id, strong)`. A strong token requires a further step to
/// exist; a weak one is discharged if the trace ends instead.
type Signed = (u32, bool);

fn step(
    state: &State,
    mask: u32,
    atoms: &[String],
    tokens: &[Formula],
    ids: &HashMap<Formula, u32>,
) -> State {
    let mut combined: Antichain<Signed> = Antichain::falsity();
    for term in &state.obligation.0 {
        let mut conj: Antichain<Signed> = Antichain::truth();
        for &tok in term {
            conj = conj.and(&progress(&tokens[tok as usize], mask, atoms, ids));
            if conj.0.is_empty() {
                break;
            }
        }
        combined = combined.or(&conj);
    }
    // Accept on trace end iff some term survives with only weak tokens.
    let accepting = combined
        .0
        .iter()
        .any(|term| term.iter().all(|&(_, strong)| !strong));
    let obligation = Antichain::normalize(
        combined
            .0
            .iter()
            .map(|term| term.iter().map(|&(id, _)| id).collect())
            .collect(),
    );
    State {
        obligation,
        accepting,
    }
}

/// One-step rewrite of a formula against the current valuation, as a
/// monotone combination of signed tokens for the suffix.
fn progress(
    f: &Formula,
    mask: u32,
    atoms: &[String],
    ids: &HashMap<Formula, u32>,
) -> Antichain<Signed> {
    match f {
        Formula::True => Antichain::truth(),
        Formula::False => Antichain::falsity(),
        Formula::Atom(a) => {
            if atom_true(a, mask, atoms) {
                Antichain::truth()
            } else {
                Antichain::falsity()
            }
        }
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Atom(a) => {
                if atom_true(a, mask, atoms) {
                    Antichain::falsity()
                } else {
                    Antichain::truth()
                }
            }
            _ => unreachable!("input is in negation normal form"),
        },
        Formula::And(l, r) => progress(l, mask, atoms, ids).and(&progress(r, mask, atoms, ids)),
        Formula::Or(l, r) => progress(l, mask, atoms, ids).or(&progress(r, mask, atoms, ids)),
        Formula::Next(g) => Antichain::unit((ids[g.as_ref()], true)),
        Formula::WeakNext(g) => Antichain::unit((ids[g.as_ref()], false)),
        // f U g  ==  g  or  (f and X(f U g))
        Formula::Until(l, r) => progress(r, mask, atoms, ids).or(&progress(l, mask, atoms, ids)
            .and(&Antichain::unit((ids[f], true)))),
        // f R g  ==  g  and  (f or WX(f R g))
        Formula::Release(l, r) => progress(r, mask, atoms, ids).and(
            &progress(l, mask, atoms, ids).or(&Antichain::unit((ids[f], false))),
        ),
        _ => unreachable!("input is in negation normal form"),
    }
}

fn atom_true(name: &str, mask: u32, atoms: &[String]) -> bool {
    let i = atoms
        .iter()
        .position(|a| a == name)
        .expect("formula atom present in alphabet");
    mask >> i & 1 == 1
}
