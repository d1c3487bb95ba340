use std::collections::BTreeSet;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn universe(labels: &[&str]) -> Universe {
    Universe::new(labels.iter().map(|s| s.to_string()))
}

fn digits() -> Vec<i64> {
    (0..10).collect()
}

fn abc_system() -> ConstraintSystem {
    let u = Universe::default();
    let mut vars = IndexMap::new();
    for v in ["A", "B", "C"] {
        vars.insert(v.to_string(), digits());
    }
    let mut constraints = IndexMap::new();
    constraints.insert(
        "sum".to_string(),
        ConstraintDef::parse("sum", vec!["A".into(), "B".into(), "C".into()], "A + B = C", &u)
            .unwrap(),
    );
    constraints.insert(
        "same".to_string(),
        ConstraintDef::parse(
            "same",
            vec!["A".into(), "B".into(), "C".into()],
            "all_equal([A, B, C])",
            &u,
        )
        .unwrap(),
    );
    ConstraintSystem::new(vars, constraints, u)
}

fn guard(text: &str, atoms: &[&str]) -> Guard {
    let known: BTreeSet<String> = atoms.iter().map(|s| s.to_string()).collect();
    Guard::parse(text, &known).unwrap()
}

fn assignment(pairs: &[(&str, i64)]) -> Assignment {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn worked_example_truth_table() {
    let sys = abc_system();
    let a358 = assignment(&[("A", 3), ("B", 5), ("C", 8)]);
    assert!(sys.eval_constraint("sum", &a358).unwrap());
    assert!(!sys.eval_constraint("same", &a358).unwrap());
    let zeros = assignment(&[("A", 0), ("B", 0), ("C", 0)]);
    assert!(sys.eval_constraint("sum", &zeros).unwrap());
    assert!(sys.eval_constraint("same", &zeros).unwrap());
}

#[test]
fn all_different_is_vacuously_true_on_a_singleton() {
    let u = Universe::default();
    let c = ConstraintDef::parse("d", vec!["X".into()], "all_different([X])", &u).unwrap();
    assert!(c.eval(&[7]));
}

#[test]
fn division_or_modulo_by_zero_falsifies_the_comparison() {
    let u = Universe::default();
    let c = ConstraintDef::parse(
        "div",
        vec!["A".into(), "B".into(), "C".into()],
        "A div B = C",
        &u,
    )
    .unwrap();
    assert!(!c.eval(&[4, 0, 2]));
    assert!(c.eval(&[4, 2, 2]));
    // Negation of a falsified comparison is true.
    let n = ConstraintDef::parse(
        "ndiv",
        vec!["A".into(), "B".into(), "C".into()],
        "not (A div B = C)",
        &u,
    )
    .unwrap();
    assert!(n.eval(&[4, 0, 2]));
    let m = ConstraintDef::parse("m", vec!["A".into(), "B".into()], "A mod B = 0", &u).unwrap();
    assert!(!m.eval(&[4, 0]));
}

#[test]
fn enum_labels_resolve_through_the_universe() {
    let u = universe(&[
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
    ]);
    let c = ConstraintDef::parse(
        "r",
        vec!["C".into()],
        "C in {bird, cat, deer, dog, frog, horse}",
        &u,
    )
    .unwrap();
    assert!(c.eval(&[u.index_of("horse").unwrap()]));
    assert!(!c.eval(&[u.index_of("truck").unwrap()]));
    let cmp = ConstraintDef::parse("c", vec!["B".into()], "B = horse", &u).unwrap();
    assert!(cmp.eval(&[7]));
}

#[test]
fn unknown_variable_is_reported_by_name() {
    let u = Universe::default();
    let err = ConstraintDef::parse("p", vec!["A".into()], "A + W = 3", &u).unwrap_err();
    assert_eq!(err, CspError::UnknownVariable("W".into()));
}

#[test]
fn type_errors_are_position_annotated() {
    let u = Universe::default();
    let err = ConstraintDef::parse("p", vec!["A".into()], "A + (A = 3)", &u).unwrap_err();
    assert!(matches!(err, CspError::Type { .. }));
}

#[test]
fn sum_guard_has_55_solutions() {
    let sys = abc_system();
    let pool = sys.solve_all(&guard("sum", &["sum", "same"])).unwrap();
    assert_eq!(pool.len(), 55);
    assert_eq!(pool.vars, vec!["A", "B", "C"]);
    assert_eq!(pool.determined_free, vec!["same".to_string()]);
}

#[test]
fn sum_and_same_has_exactly_the_zero_solution() {
    let sys = abc_system();
    let pool = sys.solve_all(&guard("sum & same", &["sum", "same"])).unwrap();
    assert_eq!(pool.solutions.len(), 1);
    assert_eq!(pool.solutions[0].0, vec![0, 0, 0]);
}

#[test]
fn contradictions_yield_an_empty_pool() {
    let sys = abc_system();
    let pool = sys.solve_all(&guard("sum & !sum", &["sum", "same"])).unwrap();
    assert!(pool.is_empty());
}

#[test]
fn tuple_cap_is_enforced() {
    let sys = abc_system().with_tuple_cap(10);
    let err = sys.solve_all(&guard("sum", &["sum", "same"])).unwrap_err();
    assert!(matches!(err, CspError::TupleCapExceeded { .. }));
}

// Exhaustive enumeration filtered by eval_constraint: the independent oracle
// for the backtracking solver.
fn brute_force(sys: &ConstraintSystem, g: &Guard) -> Vec<(Vec<i64>, Vec<bool>)> {
    let relevant = g.support();
    let mut mentioned: BTreeSet<&str> = BTreeSet::new();
    for name in &relevant {
        mentioned.extend(sys.constraints()[name].params.iter().map(|p| p.as_str()));
    }
    let vars: Vec<String> = sys
        .variables()
        .keys()
        .filter(|v| mentioned.contains(v.as_str()))
        .cloned()
        .collect();
    let free: Vec<String> = sys
        .constraints()
        .iter()
        .filter(|(name, def)| {
            !relevant.contains(*name)
                && def.params.iter().all(|p| vars.contains(p))
        })
        .map(|(name, _)| name.clone())
        .collect();
    let mut out = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(values) = stack.pop() {
        if values.len() == vars.len() {
            let a: Assignment = vars.iter().cloned().zip(values.iter().copied()).collect();
            let sat = g
                .eval(|atom| sys.eval_constraint(atom, &a).ok())
                .unwrap_or(false);
            if sat {
                let frees = free
                    .iter()
                    .map(|n| sys.eval_constraint(n, &a).unwrap())
                    .collect();
                out.push((values, frees));
            }
            continue;
        }
        let next = &sys.variables()[&vars[values.len()]];
        for &v in next.iter().rev() {
            let mut vs = values.clone();
            vs.push(v);
            stack.push(vs);
        }
    }
    out.sort();
    out
}

#[test]
fn solver_matches_brute_force_on_the_worked_system() {
    let sys = abc_system();
    for g in ["sum", "same", "sum & same", "sum | !same", "!sum & !same"] {
        let g = guard(g, &["sum", "same"]);
        let mut got = sys.solve_all(&g).unwrap().solutions;
        got.sort();
        assert_eq!(got, brute_force(&sys, &g), "guard {}", g.to_text());
    }
}

#[test]
fn cache_counts_one_miss_then_hits() {
    let sys = abc_system();
    let cache = SolutionCache::new();
    let g = guard("sum", &["sum", "same"]);
    let p1 = cache.get(&sys, &g).unwrap();
    let p2 = cache.get(&sys, &g).unwrap();
    assert!(Arc::ptr_eq(&p1, &p2));
    let stats = cache.stats();
    assert_eq!(stats.misses, 1);
    assert_eq!(stats.hits, 1);
    assert_eq!(stats.pools, 1);
    assert_eq!(stats.solutions, 55);
}

#[test]
fn concurrent_gets_fill_exactly_once() {
    let sys = abc_system();
    let cache = SolutionCache::new();
    let g = guard("sum | same", &["sum", "same"]);
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| cache.get(&sys, &g).unwrap());
        }
    });
    let stats = cache.stats();
    assert_eq!(stats.misses, 1);
    assert_eq!(stats.hits, 7);
}

#[test]
fn cache_is_transparent_for_identical_rng_streams() {
    let sys = abc_system();
    let g = guard("sum", &["sum", "same"]);
    let cache = SolutionCache::new();
    let cached_pool = cache.get(&sys, &g).unwrap();
    let direct_pool = sys.solve_all(&g).unwrap();
    assert_eq!(*cached_pool, direct_pool);
    let mut r1 = ChaCha8Rng::seed_from_u64(11);
    let mut r2 = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a = sys.sample_from_pool(&cached_pool, &mut r1).unwrap();
        let b = sys.sample_from_pool(&direct_pool, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn cache_solution_cap_is_enforced() {
    let sys = abc_system();
    let cache = SolutionCache::with_solution_cap(10);
    let err = cache.get(&sys, &guard("sum", &["sum", "same"])).unwrap_err();
    assert!(matches!(err, CspError::CacheCapExceeded { cap: 10 }));
}

#[test]
fn variables_outside_the_guard_are_uniform_and_irrelevant() {
    // q mentions only A and B; C must be filled uniformly and flagged
    // irrelevant in every sample.
    let u = Universe::default();
    let mut vars = IndexMap::new();
    for v in ["A", "B", "C"] {
        vars.insert(v.to_string(), digits());
    }
    let mut constraints = IndexMap::new();
    constraints.insert(
        "q".to_string(),
        ConstraintDef::parse("q", vec!["A".into(), "B".into()], "all_different([A, B])", &u)
            .unwrap(),
    );
    constraints.insert(
        "sum".to_string(),
        ConstraintDef::parse("sum", vec!["A".into(), "B".into(), "C".into()], "A + B = C", &u)
            .unwrap(),
    );
    let sys = ConstraintSystem::new(vars, constraints, u);
    let pool = sys.solve_all(&guard("q", &["q", "sum"])).unwrap();
    assert_eq!(pool.vars, vec!["A", "B"]);
    assert_eq!(pool.len(), 90);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen_c: BTreeSet<i64> = BTreeSet::new();
    for _ in 0..200 {
        let s = sys.sample_from_pool(&pool, &mut rng).unwrap();
        assert!(!s.variable_relevance["C"]);
        assert!(s.variable_relevance["A"] && s.variable_relevance["B"]);
        assert!(s.constraint_relevance["q"]);
        assert!(!s.constraint_relevance["sum"]);
        assert_eq!(
            s.truths["sum"],
            s.assignment["A"] + s.assignment["B"] == s.assignment["C"]
        );
        seen_c.insert(s.assignment["C"]);
    }
    assert_eq!(seen_c.len(), 10);
}

#[test]
fn sampling_from_an_empty_pool_fails() {
    let sys = abc_system();
    let pool = sys.solve_all(&guard("sum & !sum", &["sum", "same"])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sys.sample_from_pool(&pool, &mut rng),
        Err(CspError::EmptyPool(_))
    ));
}

#[test]
fn pool_sampling_is_uniform_chi_squared() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let sys = abc_system();
    let pool = sys.solve_all(&guard("sum", &["sum", "same"])).unwrap();
    let k = pool.len();
    assert_eq!(k, 55);
    let n = 10_000usize;
    let mut counts = vec![0usize; k];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..n {
        let s = sys.sample_from_pool(&pool, &mut rng).unwrap();
        let idx = pool
            .solutions
            .iter()
            .position(|(vals, _)| {
                vals[0] == s.assignment["A"]
                    && vals[1] == s.assignment["B"]
                    && vals[2] == s.assignment["C"]
            })
            .unwrap();
        counts[idx] += 1;
    }
    let expected = n as f64 / k as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).unwrap();
    let p_value = 1.0 - dist.cdf(chi2);
    assert!(p_value > 0.001, "chi2 = {chi2}, p = {p_value}");
}

#[test]
fn guard_partition_sums_to_the_full_assignment_space() {
    // Guards of a complete automaton state partition the valuation space, so
    // pool sizes, expanded by the domains of unmentioned variables, must sum
    // to the total number of assignments.
    use crate::ltlf::parse_formula;
    use crate::sfa::compile;
    let sys = abc_system();
    let known: BTreeSet<String> = ["sum", "same"].iter().map(|s| s.to_string()).collect();
    let f = parse_formula("F sum & (same U X sum)", &known).unwrap();
    let a = compile(&f).unwrap();
    let total: u128 = sys.variables().values().map(|d| d.len() as u128).product();
    for s in 0..a.state_count() {
        let mut acc: u128 = 0;
        for (g, _) in a.transitions_from(s) {
            let pool = sys.solve_all(g).unwrap();
            let fill: u128 = sys
                .variables()
                .keys()
                .filter(|v| !pool.vars.contains(v))
                .map(|v| sys.variables()[v].len() as u128)
                .product();
            acc += pool.len() as u128 * fill;
        }
        assert_eq!(acc, total, "state {s}");
    }
}
