//! Biased randomized walks over a compiled automaton.
//!
//! Sequential mode samples positive or negative sequences by a length-limited
//! randomized depth-first search with backtracking, shrinking the target
//! length on failure. Incremental mode samples a single positive walk of
//! fixed length and schedules orphan constraints (declared but absent from
//! the formula) into episodes on a best-effort basis.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::Rng;
use thiserror::Error;

use crate::csp::{ConstraintSystem, CspError, SolutionCache};
use crate::ltlf::{eval_trace, Trace, Valuation};
use crate::sfa::{Guard, Sfa, StateId};
use crate::spec::{Balance, BiasOptions, CountSpec, LengthSpec, Mode, OrphanCoverage, TaskSpec};
use crate::stream_rng::derive;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("no {} walk of length {min}..={max} exists", if *.target { "accepting" } else { "rejecting" })]
    Infeasible { target: bool, min: u32, max: u32 },
    #[error("spec mode/operation mismatch: expected {0}")]
    WrongMode(&'static str),
    #[error(transparent)]
    Csp(#[from] CspError),
    #[error(transparent)]
    Sfa(#[from] crate::sfa::SfaError),
}

/// Whether a guard's constraint problem has at least one solution. Walks
/// never take transitions whose pools are empty.
pub trait TransitionFeasibility {
    fn feasible(&self, guard: &Guard) -> Result<bool, CspError>;
}

/// Feasibility for plain automaton walks (tests, formula-only use).
pub struct AlwaysFeasible;

impl TransitionFeasibility for AlwaysFeasible {
    fn feasible(&self, _guard: &Guard) -> Result<bool, CspError> {
        Ok(true)
    }
}

/// Feasibility backed by the lazily-filled solution cache.
pub struct PoolFeasibility<'a> {
    pub system: &'a ConstraintSystem,
    pub cache: &'a SolutionCache,
}

impl TransitionFeasibility for PoolFeasibility<'_> {
    fn feasible(&self, guard: &Guard) -> Result<bool, CspError> {
        Ok(!self.cache.get(self.system, guard)?.is_empty())
    }
}

/// One transition taken by a walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkStep {
    pub from: StateId,
    pub guard: Guard,
    pub to: StateId,
}

/// A complete walk from the initial state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkResult {
    pub steps: Vec<WalkStep>,
    pub target_label: bool,
    pub achieved_length: u32,
}

impl WalkResult {
    pub fn state_trace(&self, initial: StateId) -> Vec<StateId> {
        let mut states = Vec::with_capacity(self.steps.len() + 1);
        states.push(initial);
        states.extend(self.steps.iter().map(|s| s.to));
        states
    }
}

/// Prune candidate successors by the linear-decay rule: on the k-th
/// encounter (0-indexed) of a state as a candidate, a self-loop survives
/// with probability `min(1, k * self_loop_decay)`, and a sink state with
/// `min(1, k * sink_decay)`. A rate of 0 disables that rule. If pruning
/// would empty the list, it is skipped for this step.
pub fn apply_bias<R: Rng + ?Sized>(
    candidates: &[(usize, StateId)],
    current: StateId,
    is_sink: impl Fn(StateId) -> bool,
    visit_counts: &mut HashMap<StateId, u64>,
    bias: &BiasOptions,
    rng: &mut R,
) -> Vec<(usize, StateId)> {
    let mut kept = Vec::with_capacity(candidates.len());
    for &(idx, succ) in candidates {
        let k = {
            let c = visit_counts.entry(succ).or_insert(0);
            let k = *c;
            *c += 1;
            k
        };
        let survive_prob = if succ == current && bias.self_loop_decay > 0.0 {
            (k as f64 * bias.self_loop_decay).min(1.0)
        } else if succ != current && is_sink(succ) && bias.sink_decay > 0.0 {
            (k as f64 * bias.sink_decay).min(1.0)
        } else {
            1.0
        };
        if survive_prob >= 1.0 || rng.random::<f64>() < survive_prob {
            kept.push((idx, succ));
        }
    }
    if kept.is_empty() {
        candidates.to_vec()
    } else {
        kept
    }
}

/// Length-limited randomized depth-first search for a walk whose final state
/// matches `target`. The target length is drawn uniformly from the range;
/// on failure the search retries at successively shorter lengths down to the
/// minimum. Transitions whose solution pools are empty are pruned before
/// bias pruning; `(state, remaining)` pairs that exhausted their subtree are
/// memoized as dead within one search.
pub fn sample_walk<R: Rng + ?Sized>(
    sfa: &Sfa,
    feasibility: &impl TransitionFeasibility,
    target: bool,
    len_range: (u32, u32),
    bias: &BiasOptions,
    rng: &mut R,
) -> Result<WalkResult, SampleError> {
    let (min, max) = len_range;
    assert!(min >= 1 && min <= max, "length range must satisfy 1 <= min <= max");
    let drawn = rng.random_range(min..=max);
    for target_len in (min..=drawn).rev() {
        let mut search = Search {
            sfa,
            feasibility,
            target,
            bias,
            visit_counts: HashMap::new(),
            dead: HashSet::new(),
            feasible_memo: HashMap::new(),
        };
        if let Some(steps) = search.dfs(sfa.initial(), target_len, rng)? {
            return Ok(WalkResult {
                achieved_length: steps.len() as u32,
                steps,
                target_label: target,
            });
        }
    }
    Err(SampleError::Infeasible { target, min, max })
}

struct Search<'a, F: TransitionFeasibility> {
    sfa: &'a Sfa,
    feasibility: &'a F,
    target: bool,
    bias: &'a BiasOptions,
    visit_counts: HashMap<StateId, u64>,
    dead: HashSet<(StateId, u32)>,
    feasible_memo: HashMap<(StateId, usize), bool>,
}

impl<F: TransitionFeasibility> Search<'_, F> {
    fn dfs<R: Rng + ?Sized>(
        &mut self,
        state: StateId,
        remaining: u32,
        rng: &mut R,
    ) -> Result<Option<Vec<WalkStep>>, SampleError> {
        if remaining == 0 {
            return Ok((self.sfa.is_accepting(state) == self.target).then(Vec::new));
        }
        if self.dead.contains(&(state, remaining)) {
            return Ok(None);
        }
        let mut candidates = Vec::new();
        for (idx, (guard, to)) in self.sfa.transitions_from(state).iter().enumerate() {
            let feasible = match self.feasible_memo.get(&(state, idx)) {
                Some(&f) => f,
                None => {
                    let f = self.feasibility.feasible(guard)?;
                    self.feasible_memo.insert((state, idx), f);
                    f
                }
            };
            if feasible {
                candidates.push((idx, *to));
            }
        }
        let mut kept = apply_bias(
            &candidates,
            state,
            |s| self.sfa.is_sink(s),
            &mut self.visit_counts,
            self.bias,
            rng,
        );
        kept.shuffle(rng);
        for (idx, succ) in kept {
            if let Some(mut steps) = self.dfs(succ, remaining - 1, rng)? {
                let (guard, _) = &self.sfa.transitions_from(state)[idx];
                steps.insert(
                    0,
                    WalkStep {
                        from: state,
                        guard: guard.clone(),
                        to: succ,
                    },
                );
                return Ok(Some(steps));
            }
        }
        self.dead.insert((state, remaining));
        Ok(None)
    }
}

/// Sequential-mode dataset of walks: per split, exactly the requested count;
/// balanced mode yields `ceil(N/2)` positives then `floor(N/2)` negatives.
/// Each sequence draws from its own stream derived from `(seed, split,
/// index)`, so results do not depend on scheduling.
pub fn sample_sequential_dataset(
    spec: &TaskSpec,
    sfa: &Sfa,
    feasibility: &(impl TransitionFeasibility + Sync),
) -> Result<BTreeMap<String, Vec<WalkResult>>, SampleError> {
    if spec.mode != Mode::Sequential {
        return Err(SampleError::WrongMode("sequential"));
    }
    let LengthSpec::Range { min, max } = spec.length else {
        return Err(SampleError::WrongMode("sequential"));
    };
    let CountSpec::PerSplit(counts) = &spec.counts else {
        return Err(SampleError::WrongMode("sequential"));
    };
    let mut out = BTreeMap::new();
    for (split, &count) in counts {
        let positives = match spec.balance {
            Balance::AllPositive => count,
            Balance::Balanced => count.div_ceil(2),
        };
        // Parallel per sequence: each index has its own derived stream, so
        // results are independent of scheduling and worker count.
        let walks: Result<Vec<WalkResult>, SampleError> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive(spec.seed, &["walk", split, &i.to_string()]);
                let target = i < positives;
                sample_walk(sfa, feasibility, target, (min, max), &spec.bias, &mut rng)
            })
            .collect();
        out.insert(split.clone(), walks?);
    }
    Ok(out)
}

/// One episode of a curriculum: the transition taken, the constraint truths
/// every sample of the episode must satisfy, and the orphan scheduled for it
/// (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePlan {
    pub from: StateId,
    pub to: StateId,
    pub guard: Guard,
    /// Truth of every formula atom during this episode.
    pub truths: BTreeMap<String, bool>,
    pub orphan: Option<String>,
}

/// A positive walk of exactly the configured number of episodes, with one
/// fully decided constraint pattern per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    pub states: Vec<StateId>,
    pub episodes: Vec<EpisodePlan>,
}

impl Curriculum {
    /// The constraint-truth trace induced by the episode patterns.
    pub fn truth_trace(&self) -> Trace {
        Trace::new(
            self.episodes
                .iter()
                .map(|e| e.truths.clone().into_iter().collect::<Valuation>())
                .collect(),
        )
        .expect("curricula have at least one episode")
    }
}

/// Incremental-mode sampling: a single positive walk of exactly `T` steps.
///
/// Each episode's transition guard is narrowed to one feasible full valuation
/// of the formula atoms (every sample of the episode realizes it exactly).
/// With best-effort coverage, each orphan is greedily assigned the earliest
/// episode where it can hold together with the episode pattern.
pub fn sample_curriculum(
    spec: &TaskSpec,
    sfa: &Sfa,
    cache: &SolutionCache,
) -> Result<Curriculum, SampleError> {
    if spec.mode != Mode::Incremental {
        return Err(SampleError::WrongMode("incremental"));
    }
    let LengthSpec::Episodes(episodes) = spec.length else {
        return Err(SampleError::WrongMode("incremental"));
    };
    let system = spec.system();
    let feasibility = PoolFeasibility { system, cache };
    let mut rng = derive(spec.seed, &["curriculum"]);
    let walk = sample_walk(
        sfa,
        &feasibility,
        true,
        (episodes, episodes),
        &spec.bias,
        &mut rng,
    )?;

    // Narrow each step's guard to one feasible full atom valuation, chosen
    // uniformly among the satisfiable ones.
    let atoms: Vec<String> = sfa.atoms().to_vec();
    let mut plans = Vec::with_capacity(walk.steps.len());
    for step in &walk.steps {
        let masks = step.guard.satisfying_masks(&atoms)?;
        let mut feasible_minterms = Vec::new();
        for mask in masks {
            let minterm = minterm_guard(&atoms, mask);
            if feasibility.feasible(&minterm)? {
                feasible_minterms.push((mask, minterm));
            }
        }
        // Non-empty: the guard's own pool is non-empty, and each of its
        // solutions realizes some satisfying valuation.
        let (mask, _) = feasible_minterms[rng.random_range(0..feasible_minterms.len())];
        let truths: BTreeMap<String, bool> = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), mask >> i & 1 == 1))
            .collect();
        plans.push(EpisodePlan {
            from: step.from,
            to: step.to,
            guard: step.guard.clone(),
            truths,
            orphan: None,
        });
    }

    if spec.bias.orphan_coverage == OrphanCoverage::BestEffort {
        for orphan in spec.orphans() {
            let slot = plans.iter().position(|plan| {
                plan.orphan.is_none()
                    && episode_orphan_feasible(&feasibility, &atoms, plan, &orphan)
                        .unwrap_or(false)
            });
            if let Some(t) = slot {
                plans[t].orphan = Some(orphan);
            }
        }
    }

    let curriculum = Curriculum {
        states: walk.state_trace(sfa.initial()),
        episodes: plans,
    };
    debug_assert!(eval_trace(spec.formula(), &curriculum.truth_trace()).unwrap_or(false));
    Ok(curriculum)
}

fn minterm_guard(atoms: &[String], mask: u32) -> Guard {
    let mut g = Guard::truth();
    for (i, a) in atoms.iter().enumerate() {
        g = g.and_literal(a, mask >> i & 1 == 1);
    }
    g
}

/// The episode pattern conjoined with a positive occurrence of the orphan.
pub fn episode_pattern(plan: &EpisodePlan, orphan_literal: Option<(&str, bool)>) -> Guard {
    let mut g = Guard::truth();
    for (atom, truth) in &plan.truths {
        g = g.and_literal(atom, *truth);
    }
    if let Some((name, polarity)) = orphan_literal {
        g = g.and_literal(name, polarity);
    }
    g
}

fn episode_orphan_feasible(
    feasibility: &PoolFeasibility,
    _atoms: &[String],
    plan: &EpisodePlan,
    orphan: &str,
) -> Result<bool, CspError> {
    feasibility.feasible(&episode_pattern(plan, Some((orphan, true))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltlf::parse_formula;
    use crate::sfa::compile;
    use crate::spec::{bundled_spec_text, load_spec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn atoms(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn fig_sfa() -> Sfa {
        compile(&parse_formula("F r & ((p <-> X q) U r)", &atoms(&["p", "q", "r"])).unwrap())
            .unwrap()
    }

    fn default_bias() -> BiasOptions {
        BiasOptions::default()
    }

    // Replay a walk's guards as concrete valuations and check the formula
    // oracle agrees with the walk's target label.
    fn walk_is_sound(formula_text: &str, names: &[&str], walk: &WalkResult) {
        let f = parse_formula(formula_text, &atoms(names)).unwrap();
        let all: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let steps: Vec<Valuation> = walk
            .steps
            .iter()
            .map(|s| {
                let mask = s.guard.satisfying_masks(&all).unwrap()[0];
                all.iter()
                    .enumerate()
                    .map(|(i, a)| (a.clone(), mask >> i & 1 == 1))
                    .collect()
            })
            .collect();
        let tr = Trace::new(steps).unwrap();
        assert_eq!(eval_trace(&f, &tr).unwrap(), walk.target_label);
    }

    #[test]
    fn positive_walk_of_fixed_length_ends_accepting() {
        let sfa = fig_sfa();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let walk =
            sample_walk(&sfa, &AlwaysFeasible, true, (5, 5), &default_bias(), &mut rng).unwrap();
        assert_eq!(walk.achieved_length, 5);
        assert_eq!(walk.steps.len(), 5);
        assert!(sfa.is_accepting(walk.steps.last().unwrap().to));
        walk_is_sound("F r & ((p <-> X q) U r)", &["p", "q", "r"], &walk);
    }

    #[test]
    fn negative_walk_violates_globally() {
        let sfa = compile(&parse_formula("G p", &atoms(&["p"])).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let walk =
            sample_walk(&sfa, &AlwaysFeasible, false, (3, 3), &default_bias(), &mut rng).unwrap();
        assert!(!sfa.is_accepting(walk.steps.last().unwrap().to));
        walk_is_sound("G p", &["p"], &walk);
    }

    #[test]
    fn universal_language_has_no_negative_walks() {
        let sfa = compile(&formula_true()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = sample_walk(&sfa, &AlwaysFeasible, false, (1, 4), &default_bias(), &mut rng)
            .unwrap_err();
        assert!(matches!(
            err,
            SampleError::Infeasible {
                target: false,
                min: 1,
                max: 4
            }
        ));
    }

    fn formula_true() -> crate::ltlf::Formula {
        parse_formula("true", &BTreeSet::new()).unwrap()
    }

    #[test]
    fn bias_first_encounter_always_prunes_self_loop() {
        let bias = BiasOptions {
            self_loop_decay: 0.1,
            ..Default::default()
        };
        // State 7 is a self-loop candidate of state 7 (k = 0 on first call).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut counts = HashMap::new();
            let kept = apply_bias(&[(0, 7), (1, 8)], 7, |_| false, &mut counts, &bias, &mut rng);
            assert_eq!(kept, vec![(1, 8)]);
        }
    }

    #[test]
    fn bias_survival_clamps_to_one() {
        let bias = BiasOptions {
            self_loop_decay: 0.1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = HashMap::new();
        counts.insert(7, 10u64); // k = 10 -> survival 1.0
        for _ in 0..50 {
            let kept = apply_bias(&[(0, 7)], 7, |_| false, &mut counts, &bias, &mut rng);
            assert_eq!(kept.len(), 1);
        }
    }

    #[test]
    fn zero_rate_never_prunes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut counts = HashMap::new();
        for _ in 0..50 {
            let kept = apply_bias(
                &[(0, 7), (1, 8)],
                7,
                |_| true,
                &mut counts,
                &BiasOptions::default(),
                &mut rng,
            );
            assert_eq!(kept.len(), 2);
        }
    }

    #[test]
    fn pruning_that_would_empty_the_list_is_ignored() {
        let bias = BiasOptions {
            self_loop_decay: 0.1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = HashMap::new();
        // Only candidate is a first-encounter self-loop: survival 0, but the
        // progress guarantee keeps it.
        let kept = apply_bias(&[(0, 7)], 7, |_| false, &mut counts, &bias, &mut rng);
        assert_eq!(kept, vec![(0, 7)]);
    }

    #[test]
    fn self_loop_pruning_tracks_the_decay_rate() {
        // Survival at the k-th encounter is min(1, k * rate): any positive
        // rate suppresses self-loops relative to the unbiased walk, and a
        // smaller rate suppresses them for longer (more encounters until
        // survival reaches 1), so mean repeats grow with the rate.
        let sfa = compile(&parse_formula("G F p", &atoms(&["p"])).unwrap()).unwrap();
        let mean_repeats = |rate: f64, seed: u64| {
            let bias = BiasOptions {
                self_loop_decay: rate,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0usize;
            for _ in 0..300 {
                let walk =
                    sample_walk(&sfa, &AlwaysFeasible, true, (12, 12), &bias, &mut rng).unwrap();
                total += walk.steps.iter().filter(|s| s.from == s.to).count();
            }
            total as f64 / 300.0
        };
        let unbiased = mean_repeats(0.0, 11);
        let weak = mean_repeats(0.05, 11);
        let strong = mean_repeats(0.8, 11);
        assert!(weak < strong, "weak {weak} vs strong {strong}");
        assert!(strong < unbiased, "strong {strong} vs unbiased {unbiased}");
    }

    #[test]
    fn sequential_dataset_honors_counts_lengths_and_balance() {
        let spec = load_spec(bundled_spec_text("task3_short").unwrap()).unwrap();
        let sfa = spec.compile().unwrap();
        let by_split = sample_sequential_dataset(&spec, &sfa, &AlwaysFeasible).unwrap();
        assert_eq!(by_split["train"].len(), 320);
        assert_eq!(by_split["val"].len(), 40);
        assert_eq!(by_split["test"].len(), 40);
        for walks in by_split.values() {
            for w in walks {
                assert!((10..=20).contains(&w.achieved_length));
                walk_is_sound("F p & (q U X p)", &["p", "q"], w);
            }
            let positives = walks.iter().filter(|w| w.target_label).count();
            assert_eq!(positives, walks.len().div_ceil(2));
        }
    }

    #[test]
    fn all_positive_mode_yields_only_positive_labels() {
        let text = bundled_spec_text("task5_short")
            .unwrap()
            .replace("\"balanced\"", "\"all_positive\"");
        let spec = load_spec(&text).unwrap();
        let sfa = spec.compile().unwrap();
        let by_split = sample_sequential_dataset(&spec, &sfa, &AlwaysFeasible).unwrap();
        assert!(by_split
            .values()
            .flatten()
            .all(|w| w.target_label));
    }

    #[test]
    fn resampling_with_the_same_seed_is_identical() {
        let spec = load_spec(bundled_spec_text("task6_short").unwrap()).unwrap();
        let sfa = spec.compile().unwrap();
        let a = sample_sequential_dataset(&spec, &sfa, &AlwaysFeasible).unwrap();
        let b = sample_sequential_dataset(&spec, &sfa, &AlwaysFeasible).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ccl_task1_curriculum_has_one_zero_episode_and_covered_orphans() {
        let spec = load_spec(bundled_spec_text("ccl_task1_mnist").unwrap()).unwrap();
        let sfa = spec.compile().unwrap();
        let cache = SolutionCache::new();
        let cur = sample_curriculum(&spec, &sfa, &cache).unwrap();
        assert_eq!(cur.episodes.len(), 10);
        assert_eq!(cur.states.len(), 11);
        let zero_episodes = cur
            .episodes
            .iter()
            .filter(|e| e.truths["zero"])
            .count();
        assert_eq!(zero_episodes, 1);
        assert!(eval_trace(spec.formula(), &cur.truth_trace()).unwrap());
        let scheduled: BTreeSet<&str> = cur
            .episodes
            .iter()
            .filter_map(|e| e.orphan.as_deref())
            .collect();
        assert!(scheduled.contains("even"));
        assert!(scheduled.contains("odd"));
    }

    #[test]
    fn ccl_task2_curriculum_satisfies_its_formula() {
        let spec = load_spec(bundled_spec_text("ccl_task2_mnist").unwrap()).unwrap();
        let sfa = spec.compile().unwrap();
        let cache = SolutionCache::new();
        let cur = sample_curriculum(&spec, &sfa, &cache).unwrap();
        assert_eq!(cur.episodes.len(), 20);
        assert!(eval_trace(spec.formula(), &cur.truth_trace()).unwrap());
    }

    #[test]
    fn distinct_seeds_give_distinct_state_traces_satisfying_the_formula() {
        let base = bundled_spec_text("ccl_task2_mnist").unwrap();
        let mut traces = Vec::new();
        for seed in [11u64, 22, 33] {
            let text = base.replace("\"seed\": 203", &format!("\"seed\": {seed}"));
            let spec = load_spec(&text).unwrap();
            let sfa = spec.compile().unwrap();
            let cache = SolutionCache::new();
            let cur = sample_curriculum(&spec, &sfa, &cache).unwrap();
            assert!(eval_trace(spec.formula(), &cur.truth_trace()).unwrap());
            traces.push(
                cur.episodes
                    .iter()
                    .map(|e| e.truths.clone())
                    .collect::<Vec<_>>(),
            );
        }
        assert!(traces[0] != traces[1] || traces[1] != traces[2]);
    }
}
