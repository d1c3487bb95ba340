//! Transition guards: propositional formulas over constraint atoms, held in
//! a canonical simplified sum-of-products form.
//!
//! Canonicality matters twice: exported automata must be stable across runs,
//! and the solution cache keys pools by guard, so two guards denoting the
//! same Boolean function must produce the same key.

use std::collections::BTreeSet;

use crate::ltlf::{parse_formula, Formula};

use super::SfaError;

/// Propositional guard in canonical sum-of-products form.
///
/// A term is a conjunction of literals `(atom, polarity)` sorted by atom; the
/// guard is the disjunction of its terms. No terms denotes `false`, a single
/// empty term denotes `true`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Guard {
    terms: Vec<Vec<(String, bool)>>,
}

impl Guard {
    pub fn truth() -> Self {
        Guard {
            terms: vec![vec![]],
        }
    }

    pub fn falsity() -> Self {
        Guard { terms: vec![] }
    }

    pub fn is_true(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].is_empty()
    }

    pub fn is_false(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Vec<(String, bool)>] {
        &self.terms
    }

    /// Atoms the guard actually depends on.
    pub fn support(&self) -> BTreeSet<String> {
        self.terms
            .iter()
            .flat_map(|t| t.iter().map(|(a, _)| a.clone()))
            .collect()
    }

    /// Build the canonical guard for the Boolean function defined over
    /// `atoms` (bit `i` of a mask = truth of `atoms[i]`) by the set of
    /// satisfying masks. Vacuous atoms are dropped before simplification, so
    /// the result depends only on the function itself.
    pub fn from_minterms(atoms: &[String], minterms: &[u32]) -> Guard {
        let k = atoms.len();
        assert!(k <= 20, "guard atom count out of range");
        let size = 1usize << k;
        let mut truth = vec![false; size];
        for &m in minterms {
            truth[m as usize] = true;
        }
        // Restrict to the support: atom i matters iff flipping its bit
        // changes the function somewhere.
        let mut support_bits = Vec::new();
        for i in 0..k {
            if (0..size).any(|m| truth[m] != truth[m ^ (1 << i)]) {
                support_bits.push(i);
            }
        }
        let sk = support_bits.len();
        let mut proj = Vec::new();
        for sm in 0..(1u32 << sk) {
            // expand back to a full mask with non-support bits cleared
            let mut full = 0u32;
            for (j, &bit) in support_bits.iter().enumerate() {
                if sm >> j & 1 == 1 {
                    full |= 1 << bit;
                }
            }
            if truth[full as usize] {
                proj.push(sm);
            }
        }
        if proj.is_empty() {
            return Guard::falsity();
        }
        if proj.len() == 1usize << sk {
            return Guard::truth();
        }
        let cubes = minimal_cover(&proj);
        let mut terms: Vec<Vec<(String, bool)>> = cubes
            .iter()
            .map(|cube| {
                (0..sk)
                    .filter(|j| cube.dc >> j & 1 == 0)
                    .map(|j| {
                        (
                            atoms[support_bits[j]].clone(),
                            cube.value >> j & 1 == 1,
                        )
                    })
                    .collect()
            })
            .collect();
        terms.sort();
        terms.dedup();
        Guard { terms }
    }

    /// Canonicalize a propositional [`Formula`] (no temporal operators).
    pub fn from_formula(f: &Formula) -> Result<Guard, SfaError> {
        let atoms: Vec<String> = f.atoms().into_iter().collect();
        if atoms.len() > 20 {
            return Err(SfaError::GuardTooWide(atoms.len()));
        }
        let mut minterms = Vec::new();
        for mask in 0..(1u32 << atoms.len()) {
            if prop_eval(f, &atoms, mask)? {
                minterms.push(mask);
            }
        }
        Ok(Guard::from_minterms(&atoms, &minterms))
    }

    /// Parse the ASCII propositional syntax (`& | ! true false`).
    pub fn parse(text: &str, known_atoms: &BTreeSet<String>) -> Result<Guard, SfaError> {
        let f = parse_formula(text, known_atoms)?;
        Guard::from_formula(&f)
    }

    /// Evaluate under a total valuation; `lookup` returns `None` for atoms it
    /// does not define.
    pub fn eval(&self, lookup: impl Fn(&str) -> Option<bool>) -> Result<bool, SfaError> {
        for term in &self.terms {
            let mut sat = true;
            for (atom, pol) in term {
                match lookup(atom) {
                    Some(v) => {
                        if v != *pol {
                            sat = false;
                            break;
                        }
                    }
                    None => return Err(SfaError::UndefinedAtom(atom.clone())),
                }
            }
            if sat {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Whether some completion of a partial valuation can satisfy the guard.
    pub fn feasible_under(&self, partial: impl Fn(&str) -> Option<bool>) -> bool {
        self.terms.iter().any(|term| {
            term.iter()
                .all(|(atom, pol)| partial(atom).is_none_or(|v| v == *pol))
        })
    }

    /// Conjunction with a single literal, re-canonicalized.
    pub fn and_literal(&self, atom: &str, polarity: bool) -> Guard {
        let mut atoms: Vec<String> = self.support().into_iter().collect();
        if !atoms.iter().any(|a| a == atom) {
            atoms.push(atom.to_string());
            atoms.sort();
        }
        let bit = atoms.iter().position(|a| a == atom).unwrap();
        let mut minterms = Vec::new();
        for mask in 0..(1u32 << atoms.len()) {
            if (mask >> bit & 1 == 1) == polarity
                && self
                    .eval(|a| {
                        atoms
                            .iter()
                            .position(|x| x == a)
                            .map(|i| mask >> i & 1 == 1)
                    })
                    .unwrap()
            {
                minterms.push(mask);
            }
        }
        Guard::from_minterms(&atoms, &minterms)
    }

    /// Full valuations over `atoms` (which must cover the support) that
    /// satisfy the guard, as bitmasks.
    pub fn satisfying_masks(&self, atoms: &[String]) -> Result<Vec<u32>, SfaError> {
        let mut out = Vec::new();
        for mask in 0..(1u32 << atoms.len()) {
            if self.eval(|a| {
                atoms
                    .iter()
                    .position(|x| x == a)
                    .map(|i| mask >> i & 1 == 1)
            })? {
                out.push(mask);
            }
        }
        Ok(out)
    }

    /// Canonical ASCII rendering, also used as the cache key.
    pub fn to_text(&self) -> String {
        if self.is_false() {
            return "false".to_string();
        }
        if self.is_true() {
            return "true".to_string();
        }
        self.terms
            .iter()
            .map(|term| {
                term.iter()
                    .map(|(a, pol)| if *pol { a.clone() } else { format!("!{a}") })
                    .collect::<Vec<_>>()
                    .join(" & ")
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

impl std::fmt::Display for Guard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn prop_eval(f: &Formula, atoms: &[String], mask: u32) -> Result<bool, SfaError> {
    Ok(match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(a) => {
            let i = atoms.iter().position(|x| x == a).unwrap();
            mask >> i & 1 == 1
        }
        Formula::Not(g) => !prop_eval(g, atoms, mask)?,
        Formula::And(l, r) => prop_eval(l, atoms, mask)? && prop_eval(r, atoms, mask)?,
        Formula::Or(l, r) => prop_eval(l, atoms, mask)? || prop_eval(r, atoms, mask)?,
        Formula::Implies(l, r) => !prop_eval(l, atoms, mask)? || prop_eval(r, atoms, mask)?,
        Formula::Iff(l, r) => prop_eval(l, atoms, mask)? == prop_eval(r, atoms, mask)?,
        _ => return Err(SfaError::TemporalGuard(f.to_ascii())),
    })
}

// ---------------------------------------------------------------------------
// Quine-McCluskey with a deterministic cover
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cube {
    // Bits that are don't-care; `value` is zero on those bits.
    dc: u32,
    value: u32,
}

impl Cube {
    fn covers(&self, minterm: u32) -> bool {
        minterm & !self.dc == self.value
    }
}

fn minimal_cover(minterms: &[u32]) -> Vec<Cube> {
    // Prime implicant generation by pairwise merging.
    let mut current: BTreeSet<Cube> = minterms
        .iter()
        .map(|&m| Cube { dc: 0, value: m })
        .collect();
    let mut primes: BTreeSet<Cube> = BTreeSet::new();
    while !current.is_empty() {
        let cubes: Vec<Cube> = current.iter().copied().collect();
        let mut merged = vec![false; cubes.len()];
        let mut next: BTreeSet<Cube> = BTreeSet::new();
        for i in 0..cubes.len() {
            for j in i + 1..cubes.len() {
                if cubes[i].dc != cubes[j].dc {
                    continue;
                }
                let diff = cubes[i].value ^ cubes[j].value;
                if diff.count_ones() == 1 {
                    merged[i] = true;
                    merged[j] = true;
                    next.insert(Cube {
                        dc: cubes[i].dc | diff,
                        value: cubes[i].value & !diff,
                    });
                }
            }
        }
        for (i, cube) in cubes.iter().enumerate() {
            if !merged[i] {
                primes.insert(*cube);
            }
        }
        current = next;
    }
    let primes: Vec<Cube> = primes.into_iter().collect();

    // Essential primes first, then greedy set cover. All tie-breaks are by
    // the derived cube order, so the cover is a function of the input set.
    let mut remaining: BTreeSet<u32> = minterms.iter().copied().collect();
    let mut chosen: Vec<Cube> = Vec::new();
    for &m in minterms {
        let covering: Vec<&Cube> = primes.iter().filter(|c| c.covers(m)).collect();
        if covering.len() == 1 && !chosen.contains(covering[0]) {
            chosen.push(*covering[0]);
        }
    }
    for cube in &chosen {
        remaining.retain(|&m| !cube.covers(m));
    }
    while !remaining.is_empty() {
        let best = primes
            .iter()
            .filter(|c| !chosen.contains(c))
            .max_by_key(|c| {
                let count = remaining.iter().filter(|&&m| c.covers(m)).count();
                // Prefer wider cubes (fewer literals) on equal coverage; the
                // final `Reverse` makes earlier cubes win remaining ties.
                (count, c.dc.count_ones(), std::cmp::Reverse(**c))
            })
            .copied()
            .expect("primes cover all minterms");
        remaining.retain(|&m| !best.covers(m));
        chosen.push(best);
    }
    chosen.sort();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn truth_and_falsity() {
        assert_eq!(Guard::from_minterms(&names(2), &[0, 1, 2, 3]), Guard::truth());
        assert_eq!(Guard::from_minterms(&names(2), &[]), Guard::falsity());
        assert_eq!(Guard::truth().to_text(), "true");
        assert_eq!(Guard::falsity().to_text(), "false");
    }

    #[test]
    fn vacuous_atoms_are_dropped() {
        // f(a0, a1) = a0, regardless of a1
        let g = Guard::from_minterms(&names(2), &[1, 3]);
        assert_eq!(g.to_text(), "a0");
        assert_eq!(g.support().len(), 1);
    }

    #[test]
    fn simplifies_adjacent_minterms() {
        // Everything except both-false is a0 | a1.
        let g = Guard::from_minterms(&names(2), &[1, 3, 2]);
        assert_eq!(g.to_text(), "a0 | a1");
        // a0 & !a1 | a0 & a1 collapses to a0.
        let h = Guard::from_minterms(&names(2), &[1, 3]);
        assert_eq!(h.to_text(), "a0");
    }

    #[test]
    fn parse_and_render_round_trip() {
        let known: BTreeSet<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        let g = Guard::parse("!q & r | p & q", &known).unwrap();
        let h = Guard::parse(&g.to_text(), &known).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn temporal_operators_are_rejected() {
        let known: BTreeSet<String> = ["p"].iter().map(|s| s.to_string()).collect();
        assert!(Guard::parse("X p", &known).is_err());
    }

    #[test]
    fn and_literal_restricts() {
        let known: BTreeSet<String> = ["p", "q"].iter().map(|s| s.to_string()).collect();
        let g = Guard::parse("p | q", &known).unwrap();
        let h = g.and_literal("q", false);
        assert_eq!(h.to_text(), "p & !q");
        assert!(g.and_literal("p", true).and_literal("p", false).is_false());
    }

    proptest! {
        #[test]
        fn canonical_form_preserves_the_function(
            k in 1usize..=4,
            sat in proptest::collection::btree_set(0u32..16, 0..=16),
        ) {
            let atoms = names(k);
            let minterms: Vec<u32> =
                sat.into_iter().map(|m| m % (1 << k)).collect::<BTreeSet<_>>().into_iter().collect();
            let g = Guard::from_minterms(&atoms, &minterms);
            for mask in 0..(1u32 << k) {
                let expect = minterms.contains(&mask);
                let got = g
                    .eval(|a| atoms.iter().position(|x| x == a).map(|i| mask >> i & 1 == 1))
                    .unwrap();
                prop_assert_eq!(got, expect);
            }
            // Canonical: same function, same guard, independent of the route.
            let again = Guard::from_minterms(&atoms, &minterms);
            prop_assert_eq!(g, again);
        }
    }
}
