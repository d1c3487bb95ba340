//! Probabilistic semantics over constraints and automata.
//!
//! Constraint probabilities are weighted model counts over per-variable
//! categorical distributions, either exact (every satisfying world) or
//! truncated to the `k` most probable satisfying worlds. Transition
//! probabilities come in two flavors: *factored*, which treats the guard's
//! atoms as independent Bernoulli inputs and counts satisfying atom
//! valuations (so idempotence and disjunction semantics are preserved at the
//! valuation level), and *joint*, the exact model count over the underlying
//! variable assignments, which does not assume independence.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::csp::ConstraintDef;
use crate::sfa::{Guard, Sfa, SfaError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("no distribution provided for variable `{0}`")]
    MissingDist(String),
    #[error("distribution for `{var}`: {message}")]
    InvalidDist { var: String, message: String },
    #[error("no probability provided for atom `{0}`")]
    MissingAtom(String),
    #[error("probability {value} for `{name}` is outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error(transparent)]
    Sfa(#[from] SfaError),
}

const DIST_SUM_TOLERANCE: f64 = 1e-9;

/// Categorical distribution over one variable's domain values.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    pub values: Vec<i64>,
    pub probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(var: &str, values: Vec<i64>, probs: Vec<f64>) -> Result<Self, ProbError> {
        if values.len() != probs.len() {
            return Err(ProbError::InvalidDist {
                var: var.to_string(),
                message: format!(
                    "{} probabilities for {} domain values",
                    probs.len(),
                    values.len()
                ),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ProbError::OutOfRange {
                name: var.to_string(),
                value: *p,
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
            return Err(ProbError::InvalidDist {
                var: var.to_string(),
                message: format!("probabilities sum to {sum}, not 1"),
            });
        }
        Ok(CategoricalDist { values, probs })
    }
}

/// Per-atom Bernoulli probabilities for factored transition evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuardAtomProbs(BTreeMap<String, f64>);

impl GuardAtomProbs {
    /// Values within rounding tolerance of [0, 1] are clamped; anything
    /// further out is rejected.
    pub fn new(probs: BTreeMap<String, f64>) -> Result<Self, ProbError> {
        let mut clamped = BTreeMap::new();
        for (name, p) in probs {
            if !(-DIST_SUM_TOLERANCE..=1.0 + DIST_SUM_TOLERANCE).contains(&p) {
                return Err(ProbError::OutOfRange { name, value: p });
            }
            clamped.insert(name, p.clamp(0.0, 1.0));
        }
        Ok(GuardAtomProbs(clamped))
    }

    pub fn get(&self, atom: &str) -> Option<f64> {
        self.0.get(atom).copied()
    }
}

impl<const N: usize> From<[(&str, f64); N]> for GuardAtomProbs {
    fn from(pairs: [(&str, f64); N]) -> Self {
        GuardAtomProbs(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

fn dists_for<'a>(
    c: &ConstraintDef,
    dists: &'a BTreeMap<String, CategoricalDist>,
) -> Result<Vec<&'a CategoricalDist>, ProbError> {
    c.params
        .iter()
        .map(|p| dists.get(p).ok_or_else(|| ProbError::MissingDist(p.clone())))
        .collect()
}

fn fold_worlds(
    dists: &[&CategoricalDist],
    mut visit: impl FnMut(&[i64], f64),
) {
    let mut values = vec![0i64; dists.len()];
    fn rec(
        dists: &[&CategoricalDist],
        depth: usize,
        weight: f64,
        values: &mut Vec<i64>,
        visit: &mut impl FnMut(&[i64], f64),
    ) {
        if depth == dists.len() {
            visit(values, weight);
            return;
        }
        for (v, p) in dists[depth].values.iter().zip(&dists[depth].probs) {
            values[depth] = *v;
            rec(dists, depth + 1, weight * p, values, visit);
        }
    }
    rec(dists, 0, 1.0, &mut values, &mut visit);
}

/// Exact probability of the constraint holding: the weighted count of every
/// satisfying assignment of its parameters.
pub fn constraint_prob_exact(
    c: &ConstraintDef,
    dists: &BTreeMap<String, CategoricalDist>,
) -> Result<f64, ProbError> {
    let ds = dists_for(c, dists)?;
    let mut total = 0.0;
    fold_worlds(&ds, |values, weight| {
        if c.eval(values) {
            total += weight;
        }
    });
    Ok(total)
}

/// Probability mass of the `k` most probable satisfying assignments. Ties
/// are broken toward the lexicographically smaller assignment, so the result
/// is deterministic. `k >= ` the number of satisfying worlds gives the exact
/// probability.
pub fn constraint_prob_topk(
    c: &ConstraintDef,
    dists: &BTreeMap<String, CategoricalDist>,
    k: usize,
) -> Result<f64, ProbError> {
    let ds = dists_for(c, dists)?;
    let mut worlds: Vec<(f64, Vec<i64>)> = Vec::new();
    fold_worlds(&ds, |values, weight| {
        if c.eval(values) {
            worlds.push((weight, values.to_vec()));
        }
    });
    worlds.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    Ok(worlds.iter().take(k).map(|(w, _)| w).sum())
}

/// Factored transition probability: atoms as independent Bernoulli inputs,
/// summed over the guard's satisfying atom valuations. Correct disjunction
/// semantics at the atom level (`a | a` has probability `P(a)`).
pub fn guard_prob_factored(g: &Guard, atom_probs: &GuardAtomProbs) -> Result<f64, ProbError> {
    let atoms: Vec<String> = g.support().into_iter().collect();
    for a in &atoms {
        if atom_probs.get(a).is_none() {
            return Err(ProbError::MissingAtom(a.clone()));
        }
    }
    if g.is_false() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for mask in 0..(1u32 << atoms.len()) {
        let sat = g
            .eval(|a| {
                atoms
                    .iter()
                    .position(|x| x == a)
                    .map(|i| mask >> i & 1 == 1)
            })
            .expect("support atoms are defined");
        if sat {
            let mut w = 1.0;
            for (i, a) in atoms.iter().enumerate() {
                let p = atom_probs.get(a).unwrap();
                w *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
            }
            total += w;
        }
    }
    Ok(total)
}

/// Joint-exact transition probability: the guard evaluated per variable
/// assignment, weighted by the variable distributions. Shared variables
/// between atoms are handled exactly, not assumed independent.
pub fn guard_prob_joint(
    g: &Guard,
    constraints: &BTreeMap<String, ConstraintDef>,
    dists: &BTreeMap<String, CategoricalDist>,
) -> Result<f64, ProbError> {
    let support = g.support();
    let mut vars: Vec<String> = Vec::new();
    for atom in &support {
        let c = constraints
            .get(atom)
            .ok_or_else(|| ProbError::MissingDist(atom.clone()))?;
        for p in &c.params {
            if !vars.contains(p) {
                vars.push(p.clone());
            }
        }
    }
    vars.sort();
    let ds: Vec<&CategoricalDist> = vars
        .iter()
        .map(|v| dists.get(v).ok_or_else(|| ProbError::MissingDist(v.clone())))
        .collect::<Result<_, _>>()?;
    if g.is_false() {
        return Ok(0.0);
    }
    if g.is_true() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    fold_worlds(&ds, |values, weight| {
        let assignment: BTreeMap<&str, i64> = vars
            .iter()
            .map(|v| v.as_str())
            .zip(values.iter().copied())
            .collect();
        let sat = g
            .eval(|atom| {
                let c = constraints.get(atom)?;
                let args: Vec<i64> = c.params.iter().map(|p| assignment[p.as_str()]).collect();
                Some(c.eval(&args))
            })
            .expect("support constraints are defined");
        if sat {
            total += weight;
        }
    });
    Ok(total)
}

/// Probability that the automaton accepts a sequence of the given length,
/// with per-step atom probabilities: a forward recursion whose transition
/// matrix entries are the factored guard probabilities.
pub fn accept_prob(a: &Sfa, per_step: &[GuardAtomProbs]) -> Result<f64, ProbError> {
    let n = a.state_count();
    let mut dist = vec![0.0f64; n];
    dist[a.initial()] = 1.0;
    for step in per_step {
        let mut next = vec![0.0f64; n];
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (guard, to) in a.transitions_from(s) {
                next[*to] += mass * guard_prob_factored(guard, step)?;
            }
        }
        dist = next;
    }
    Ok(a.accepting().iter().map(|&s| dist[s]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csp::Universe;
    use crate::ltlf::parse_formula;
    use crate::sfa::compile;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const TOL: f64 = 1e-9;

    fn cifar10_universe() -> Universe {
        Universe::new(
            [
                "airplane",
                "automobile",
                "bird",
                "cat",
                "deer",
                "dog",
                "frog",
                "horse",
                "ship",
                "truck",
            ]
            .iter()
            .map(|s| s.to_string()),
        )
    }

    // The worked three-variable example: A, B integer digits, C an
    // enumeration mapped to [0, 9] lexicographically.
    fn example() -> (BTreeMap<String, ConstraintDef>, BTreeMap<String, CategoricalDist>) {
        let u = cifar10_universe();
        let mut constraints = BTreeMap::new();
        constraints.insert(
            "p".to_string(),
            ConstraintDef::parse(
                "p",
                vec!["A".into(), "B".into(), "C".into()],
                "A = 2 * B \\/ B = 2 * C",
                &u,
            )
            .unwrap(),
        );
        constraints.insert(
            "q".to_string(),
            ConstraintDef::parse("q", vec!["A".into(), "B".into()], "all_different([A, B])", &u)
                .unwrap(),
        );
        constraints.insert(
            "r".to_string(),
            ConstraintDef::parse(
                "r",
                vec!["C".into()],
                "C in {bird, cat, deer, dog, frog, horse}",
                &u,
            )
            .unwrap(),
        );
        let digits: Vec<i64> = (0..10).collect();
        let mut dists = BTreeMap::new();
        dists.insert(
            "A".to_string(),
            CategoricalDist::new(
                "A",
                digits.clone(),
                vec![0.05, 0.0, 0.50, 0.0, 0.30, 0.0, 0.10, 0.05, 0.0, 0.0],
            )
            .unwrap(),
        );
        dists.insert(
            "B".to_string(),
            CategoricalDist::new(
                "B",
                digits.clone(),
                vec![0.0, 0.80, 0.0, 0.10, 0.10, 0.0, 0.0, 0.0, 0.0, 0.0],
            )
            .unwrap(),
        );
        dists.insert(
            "C".to_string(),
            CategoricalDist::new(
                "C",
                digits,
                vec![0.15, 0.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.80, 0.0, 0.0],
            )
            .unwrap(),
        );
        (constraints, dists)
    }

    fn guard(text: &str) -> Guard {
        let known: BTreeSet<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        Guard::parse(text, &known).unwrap()
    }

    #[test]
    fn exact_constraint_probabilities() {
        let (cs, ds) = example();
        assert!((constraint_prob_exact(&cs["p"], &ds).unwrap() - 0.41).abs() < TOL);
        assert!((constraint_prob_exact(&cs["q"], &ds).unwrap() - 0.97).abs() < TOL);
        assert!((constraint_prob_exact(&cs["r"], &ds).unwrap() - 0.85).abs() < TOL);
    }

    #[test]
    fn top_one_constraint_probabilities() {
        let (cs, ds) = example();
        assert!((constraint_prob_topk(&cs["p"], &ds, 1).unwrap() - 0.32).abs() < TOL);
        assert!((constraint_prob_topk(&cs["q"], &ds, 1).unwrap() - 0.4).abs() < TOL);
        assert!((constraint_prob_topk(&cs["r"], &ds, 1).unwrap() - 0.8).abs() < TOL);
    }

    #[test]
    fn tautology_has_probability_one() {
        let u = Universe::default();
        let t = ConstraintDef::parse("t", vec!["A".into()], "true", &u).unwrap();
        let mut dists = BTreeMap::new();
        dists.insert(
            "A".to_string(),
            CategoricalDist::new("A", vec![0, 1], vec![0.25, 0.75]).unwrap(),
        );
        assert!((constraint_prob_exact(&t, &dists).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn unbounded_k_recovers_the_exact_probability() {
        let (cs, ds) = example();
        for c in cs.values() {
            let exact = constraint_prob_exact(c, &ds).unwrap();
            let all = constraint_prob_topk(c, &ds, usize::MAX).unwrap();
            assert!((exact - all).abs() < TOL);
        }
    }

    #[test]
    fn factored_transition_probabilities() {
        let (_, _) = example();
        let exact = GuardAtomProbs::from([("p", 0.41), ("q", 0.97), ("r", 0.85)]);
        let top1 = GuardAtomProbs::from([("p", 0.32), ("q", 0.4), ("r", 0.8)]);
        let not_q_and_r = guard("!q & r");
        assert!((guard_prob_factored(&not_q_and_r, &exact).unwrap() - 0.0255).abs() < TOL);
        assert!((guard_prob_factored(&not_q_and_r, &top1).unwrap() - 0.48).abs() < TOL);
        let not_p_and_not_q = guard("!p & !q");
        assert!((guard_prob_factored(&not_p_and_not_q, &exact).unwrap() - 0.0177).abs() < TOL);
        assert!((guard_prob_factored(&not_p_and_not_q, &top1).unwrap() - 0.408).abs() < TOL);
    }

    #[test]
    fn factored_disjunction_is_idempotent() {
        let g = guard("p | p");
        let probs = GuardAtomProbs::from([("p", 0.3)]);
        assert!((guard_prob_factored(&g, &probs).unwrap() - 0.3).abs() < TOL);
    }

    #[test]
    fn joint_transition_probabilities() {
        let (cs, ds) = example();
        let j = guard_prob_joint(&guard("!p & !q"), &cs, &ds).unwrap();
        assert!((j - 0.03).abs() < TOL, "joint = {j}");
        // q and r share no variables, so joint equals factored.
        let j2 = guard_prob_joint(&guard("!q & r"), &cs, &ds).unwrap();
        assert!((j2 - 0.0255).abs() < TOL);
        assert!((guard_prob_joint(&Guard::truth(), &cs, &ds).unwrap() - 1.0).abs() < TOL);
    }

    #[test]
    fn accept_prob_on_trivial_automata() {
        let known: BTreeSet<String> = ["p"].iter().map(|s| s.to_string()).collect();
        let always = compile(&parse_formula("true", &BTreeSet::new()).unwrap()).unwrap();
        let probs = GuardAtomProbs::default();
        assert!((accept_prob(&always, &[probs]).unwrap() - 1.0).abs() < TOL);
        let single = compile(&parse_formula("p", &known).unwrap()).unwrap();
        let step = GuardAtomProbs::from([("p", 0.7)]);
        assert!((accept_prob(&single, &[step]).unwrap() - 0.7).abs() < TOL);
    }

    #[test]
    fn accept_prob_matches_brute_force_on_the_running_example() {
        let known: BTreeSet<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        let f = parse_formula("F r & ((p <-> X q) U r)", &known).unwrap();
        let a = compile(&f).unwrap();
        let step = GuardAtomProbs::from([("p", 0.41), ("q", 0.97), ("r", 0.85)]);
        let got = accept_prob(&a, std::slice::from_ref(&step)).unwrap();
        // Oracle: enumerate the eight atom valuations and sum the mass of
        // those whose one-step run accepts.
        let atoms = ["p", "q", "r"];
        let mut expected = 0.0;
        for mask in 0u32..8 {
            let val: crate::ltlf::Valuation = atoms
                .iter()
                .enumerate()
                .map(|(i, a)| (a.to_string(), mask >> i & 1 == 1))
                .collect();
            let tr = crate::ltlf::Trace::new(vec![val.clone()]).unwrap();
            if a.run(&tr).unwrap().accepted {
                let mut w = 1.0;
                for (i, name) in atoms.iter().enumerate() {
                    let p = step.get(name).unwrap();
                    w *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
                }
                expected += w;
            }
        }
        assert!((got - expected).abs() < TOL);
        // One step of the running example: acceptance is exactly "r fires".
        assert!((got - 0.85).abs() < TOL);
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let known: BTreeSet<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        let f = parse_formula("F r & ((p <-> X q) U r)", &known).unwrap();
        let a = compile(&f).unwrap();
        let probs = GuardAtomProbs::from([("p", 0.3), ("q", 0.9), ("r", 0.25)]);
        for s in 0..a.state_count() {
            let row: f64 = a
                .transitions_from(s)
                .iter()
                .map(|(g, _)| guard_prob_factored(g, &probs).unwrap())
                .sum();
            assert!((row - 1.0).abs() < TOL);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(CategoricalDist::new("A", vec![0, 1], vec![0.5, 0.6]).is_err());
        assert!(CategoricalDist::new("A", vec![0, 1], vec![1.5, -0.5]).is_err());
        let (cs, _) = example();
        let empty = BTreeMap::new();
        assert!(matches!(
            constraint_prob_exact(&cs["p"], &empty),
            Err(ProbError::MissingDist(_))
        ));
        assert!(matches!(
            guard_prob_factored(&guard("p"), &GuardAtomProbs::default()),
            Err(ProbError::MissingAtom(_))
        ));
    }

    prop_compose! {
        fn arb_dist(len: usize)(raw in proptest::collection::vec(0.01f64..1.0, len)) -> Vec<f64> {
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|p| p / sum).collect()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        // Top-k mass grows with k and never exceeds the exact probability.
        #[test]
        fn topk_is_monotone_and_dominated(
            pa in arb_dist(4),
            pb in arb_dist(4),
            threshold in 0i64..8,
            k in 1usize..6,
        ) {
            let u = Universe::default();
            let c = ConstraintDef::parse(
                "c",
                vec!["A".into(), "B".into()],
                &format!("A + B < {threshold}"),
                &u,
            ).unwrap();
            let mut dists = BTreeMap::new();
            dists.insert("A".to_string(), CategoricalDist::new("A", (0..4).collect(), pa).unwrap());
            dists.insert("B".to_string(), CategoricalDist::new("B", (0..4).collect(), pb).unwrap());
            let exact = constraint_prob_exact(&c, &dists).unwrap();
            let k_mass = constraint_prob_topk(&c, &dists, k).unwrap();
            let k1_mass = constraint_prob_topk(&c, &dists, k + 1).unwrap();
            prop_assert!(k_mass <= k1_mass + TOL);
            prop_assert!(k_mass <= exact + TOL);
        }

        // Independence collapse: with disjoint variables the joint model
        // count equals the factored product semantics.
        #[test]
        fn joint_equals_factored_on_disjoint_atoms(
            pa in arb_dist(3),
            pb in arb_dist(3),
            ta in 0i64..3,
            tb in 0i64..3,
            negate_first in any::<bool>(),
        ) {
            let u = Universe::default();
            let mut cs = BTreeMap::new();
            cs.insert("f".to_string(),
                ConstraintDef::parse("f", vec!["A".into()], &format!("A <= {ta}"), &u).unwrap());
            cs.insert("g".to_string(),
                ConstraintDef::parse("g", vec!["B".into()], &format!("B >= {tb}"), &u).unwrap());
            let mut dists = BTreeMap::new();
            dists.insert("A".to_string(), CategoricalDist::new("A", (0..3).collect(), pa).unwrap());
            dists.insert("B".to_string(), CategoricalDist::new("B", (0..3).collect(), pb).unwrap());
            let known: BTreeSet<String> = ["f", "g"].iter().map(|s| s.to_string()).collect();
            let text = if negate_first { "!f & g" } else { "f & g" };
            let gd = Guard::parse(text, &known).unwrap();
            let atom_probs = GuardAtomProbs::new(
                [
                    ("f".to_string(), constraint_prob_exact(&cs["f"], &dists).unwrap()),
                    ("g".to_string(), constraint_prob_exact(&cs["g"], &dists).unwrap()),
                ].into_iter().collect()
            ).unwrap();
            let joint = guard_prob_joint(&gd, &cs, &dists).unwrap();
            let factored = guard_prob_factored(&gd, &atom_probs).unwrap();
            prop_assert!((joint - factored).abs() < 1e-12);
        }
    }
}
