//! Task-specification files: the single source of truth for a generation
//! run. A spec declares perceptual domains, variables, named constraints, a
//! temporal formula over the constraint names, optional stream rebindings,
//! and the generation parameters (mode, lengths, counts, balance, biases,
//! seed).
//!
//! Specs are JSON documents with the canonical keys `name, mode, seed,
//! domains, variables, constraints, formula, streams, length, counts,
//! balance, bias, orphan_positive_ratio`. [`load_spec`] validates every
//! cross-reference and resolves stream occurrences by syntactic substitution
//! into fresh constraint names before compilation.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csp::{ConstraintDef, ConstraintSystem, CspError, Universe};
use crate::ltlf::{parse_formula, Formula, FormulaError};
use crate::sfa::{compile, Sfa, SfaError};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid spec JSON: {0}")]
    Json(String),
    #[error("duplicate domain name `{0}`")]
    DuplicateDomain(String),
    #[error("domain `{0}` has no labels")]
    EmptyDomain(String),
    #[error("domain `{domain}`: duplicate label `{label}`")]
    DuplicateLabel { domain: String, label: String },
    #[error("domain `{0}`: integer labels must form a contiguous ascending range")]
    NonContiguousRange(String),
    #[error("domain `{0}`: labels must be all integers or all strings")]
    MixedLabels(String),
    #[error("variable `{var}` references unknown domain `{domain}`")]
    UnknownDomain { var: String, domain: String },
    #[error("constraint `{constraint}`: parameter `{param}` is not a declared variable")]
    UnknownParam { constraint: String, param: String },
    #[error("constraint `{constraint}`: {source}")]
    Body {
        constraint: String,
        source: CspError,
    },
    #[error("formula: {0}")]
    Formula(#[from] FormulaError),
    #[error("stream for `{atom}`: {message}")]
    Stream { atom: String, message: String },
    #[error("length: min {min} exceeds max {max}")]
    MinAboveMax { min: u32, max: u32 },
    #[error("length: min must be at least 1")]
    ZeroLength,
    #[error("mode `{mode}` requires {requirement}")]
    ModeMismatch {
        mode: &'static str,
        requirement: &'static str,
    },
    #[error("counts: {0}")]
    Counts(String),
    #[error("bias: {0}")]
    Bias(String),
    #[error("orphan_positive_ratio {0} is outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error(transparent)]
    Sfa(#[from] SfaError),
}

// ---------------------------------------------------------------------------
// Raw JSON form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSpec {
    name: String,
    mode: Mode,
    seed: u64,
    domains: Vec<RawDomain>,
    variables: IndexMap<String, String>,
    constraints: IndexMap<String, RawConstraint>,
    formula: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    streams: Vec<RawStream>,
    length: RawLength,
    counts: RawCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    balance: Option<Balance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<RawBias>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orphan_positive_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawDomain {
    name: String,
    labels: RawLabels,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    sources: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabels {
    Range { range: [i64; 2] },
    List(Vec<serde_json::Value>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawConstraint {
    params: Vec<String>,
    body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawStream {
    atom: String,
    #[serde(default)]
    occurrence: u32,
    bindings: IndexMap<String, RawBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBinding {
    Plain(String),
    Full {
        domain: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<Direction>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLength {
    Range { min: u32, max: u32 },
    Episodes { episodes: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawCounts {
    Episodes {
        per_episode: u64,
        fractions: IndexMap<String, f64>,
    },
    PerSplit(IndexMap<String, u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
struct RawBias {
    #[serde(default)]
    self_loop_decay: f64,
    #[serde(default)]
    sink_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orphan_coverage: Option<OrphanCoverage>,
}

// ---------------------------------------------------------------------------
// Resolved spec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sequential,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    AllPositive,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrphanCoverage {
    Off,
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    In,
    Out,
}

/// Biasing options for the randomized walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasOptions {
    /// Linear decay rate for self-loop pruning; 0 disables the bias.
    pub self_loop_decay: f64,
    /// Same rule for accepting/non-accepting sink states.
    pub sink_decay: f64,
    pub orphan_coverage: OrphanCoverage,
}

impl Default for BiasOptions {
    fn default() -> Self {
        BiasOptions {
            self_loop_decay: 0.0,
            sink_decay: 0.0,
            orphan_coverage: OrphanCoverage::Off,
        }
    }
}

/// One perceptual domain: an ordered label set, optionally backed by
/// per-split manifest files (absent sources = synthetic, label-only domain).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDef {
    pub name: String,
    labels: Labels,
    pub sources: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Labels {
    Ints { lo: i64, hi: i64 },
    Enums(Vec<String>),
}

impl DomainDef {
    /// Values of this domain in the shared integer encoding (enum labels map
    /// to their universe index).
    pub fn values(&self, universe: &Universe) -> Vec<i64> {
        match &self.labels {
            Labels::Ints { lo, hi } => (*lo..=*hi).collect(),
            Labels::Enums(names) => names
                .iter()
                .map(|n| universe.index_of(n).expect("label in universe"))
                .collect(),
        }
    }

    /// Human-readable label for a value of this domain.
    pub fn label_of(&self, value: i64, universe: &Universe) -> String {
        match &self.labels {
            Labels::Ints { .. } => value.to_string(),
            Labels::Enums(_) => universe
                .label_at(value)
                .expect("value in universe")
                .to_string(),
        }
    }

    /// Parse a label back into its value; `None` if it does not belong here.
    pub fn value_of(&self, label: &str, universe: &Universe) -> Option<i64> {
        match &self.labels {
            Labels::Ints { lo, hi } => {
                let v: i64 = label.parse().ok()?;
                (*lo..=*hi).contains(&v).then_some(v)
            }
            Labels::Enums(names) => names
                .iter()
                .any(|n| n == label)
                .then(|| universe.index_of(label))?,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.sources.is_empty()
    }

    fn enum_labels(&self) -> Option<&[String]> {
        match &self.labels {
            Labels::Enums(names) => Some(names),
            Labels::Ints { .. } => None,
        }
    }
}

/// Stream rebinding: one occurrence of a constraint atom in the formula gets
/// fresh variables over different domains. Directions are metadata only and
/// never change generation semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamMap {
    pub atom: String,
    pub occurrence: u32,
    pub bindings: IndexMap<String, (String, Option<Direction>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthSpec {
    /// Sequential: per-sequence length drawn uniformly from `min..=max`.
    Range { min: u32, max: u32 },
    /// Incremental: exactly this many episodes.
    Episodes(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CountSpec {
    /// Sequential: sequences per split.
    PerSplit(IndexMap<String, u64>),
    /// Incremental: samples per episode, divided by split fractions.
    Episodes {
        per_episode: u64,
        fractions: IndexMap<String, f64>,
    },
}

impl CountSpec {
    pub fn split_names(&self) -> Vec<String> {
        match self {
            CountSpec::PerSplit(m) => m.keys().cloned().collect(),
            CountSpec::Episodes { fractions, .. } => fractions.keys().cloned().collect(),
        }
    }

    /// Per-split sample counts for one episode, by largest remainder so they
    /// sum exactly to `per_episode`.
    pub fn episode_split_counts(&self) -> IndexMap<String, u64> {
        match self {
            CountSpec::PerSplit(_) => IndexMap::new(),
            CountSpec::Episodes {
                per_episode,
                fractions,
            } => {
                let n = *per_episode;
                let mut counts: IndexMap<String, u64> = IndexMap::new();
                let mut remainders: Vec<(usize, f64)> = Vec::new();
                let mut used = 0u64;
                for (i, (name, f)) in fractions.iter().enumerate() {
                    let exact = n as f64 * f;
                    let floor = exact.floor() as u64;
                    counts.insert(name.clone(), floor);
                    used += floor;
                    remainders.push((i, exact - exact.floor()));
                }
                remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut left = n - used;
                for (i, _) in remainders {
                    if left == 0 {
                        break;
                    }
                    let key = fractions.get_index(i).unwrap().0.clone();
                    *counts.get_mut(&key).unwrap() += 1;
                    left -= 1;
                }
                counts
            }
        }
    }
}

/// A fully validated and resolved task specification.
///
/// Immutable after load; shared read-only across workers.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    raw: RawSpec,
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub domains: Vec<DomainDef>,
    /// Post-substitution variable -> domain-name map.
    pub variables: IndexMap<String, String>,
    pub streams: Vec<StreamMap>,
    pub length: LengthSpec,
    pub counts: CountSpec,
    pub balance: Balance,
    pub bias: BiasOptions,
    pub orphan_positive_ratio: f64,
    formula: Formula,
    system: ConstraintSystem,
}

impl PartialEq for TaskSpec {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl TaskSpec {
    /// The formula after stream substitution.
    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    /// Variables, constraints, and universe after stream substitution.
    pub fn system(&self) -> &ConstraintSystem {
        &self.system
    }

    pub fn compile(&self) -> Result<Sfa, SfaError> {
        compile(&self.formula)
    }

    /// Constraints declared but absent from the formula.
    pub fn orphans(&self) -> Vec<String> {
        let used = self.formula.atoms();
        self.system
            .constraints()
            .keys()
            .filter(|c| !used.contains(*c))
            .cloned()
            .collect()
    }

    pub fn domain(&self, name: &str) -> Option<&DomainDef> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn domain_of_var(&self, var: &str) -> Option<&DomainDef> {
        self.domain(self.variables.get(var)?)
    }

    /// Canonical re-serialization of the source document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("spec serializes")
    }

    /// The same spec under a different seed (the serialized copy follows).
    pub fn with_seed(mut self, seed: u64) -> TaskSpec {
        self.raw.seed = seed;
        self.seed = seed;
        self
    }
}

/// Parse and validate a spec document.
///
/// Defaults when omitted: `balance = balanced`, bias rates 0,
/// `orphan_coverage = off`, `orphan_positive_ratio = 1`.
pub fn load_spec(text: &str) -> Result<TaskSpec, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| SpecError::Json(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawSpec) -> Result<TaskSpec, SpecError> {
    // Domains: unique names, non-empty unique labels, contiguous int ranges.
    let mut domains: Vec<DomainDef> = Vec::new();
    for rd in &raw.domains {
        if domains.iter().any(|d| d.name == rd.name) {
            return Err(SpecError::DuplicateDomain(rd.name.clone()));
        }
        let labels = match &rd.labels {
            RawLabels::Range { range: [lo, hi] } => {
                if lo > hi {
                    return Err(SpecError::NonContiguousRange(rd.name.clone()));
                }
                Labels::Ints { lo: *lo, hi: *hi }
            }
            RawLabels::List(values) => {
                if values.is_empty() {
                    return Err(SpecError::EmptyDomain(rd.name.clone()));
                }
                if values.iter().all(|v| v.is_i64()) {
                    let ints: Vec<i64> = values.iter().map(|v| v.as_i64().unwrap()).collect();
                    for w in ints.windows(2) {
                        if w[1] != w[0] + 1 {
                            return Err(SpecError::NonContiguousRange(rd.name.clone()));
                        }
                    }
                    Labels::Ints {
                        lo: ints[0],
                        hi: *ints.last().unwrap(),
                    }
                } else if values.iter().all(|v| v.is_string()) {
                    let names: Vec<String> = values
                        .iter()
                        .map(|v| v.as_str().unwrap().to_string())
                        .collect();
                    let mut seen = BTreeSet::new();
                    for n in &names {
                        if !seen.insert(n.clone()) {
                            return Err(SpecError::DuplicateLabel {
                                domain: rd.name.clone(),
                                label: n.clone(),
                            });
                        }
                    }
                    Labels::Enums(names)
                } else {
                    return Err(SpecError::MixedLabels(rd.name.clone()));
                }
            }
        };
        domains.push(DomainDef {
            name: rd.name.clone(),
            labels,
            sources: rd.sources.clone(),
        });
    }

    // Shared enumeration universe, lexicographic across all domains.
    let universe = Universe::new(
        domains
            .iter()
            .filter_map(|d| d.enum_labels())
            .flatten()
            .cloned(),
    );

    // Variables reference declared domains.
    let mut variables: IndexMap<String, String> = IndexMap::new();
    for (var, domain) in &raw.variables {
        if !domains.iter().any(|d| d.name == *domain) {
            return Err(SpecError::UnknownDomain {
                var: var.clone(),
                domain: domain.clone(),
            });
        }
        variables.insert(var.clone(), domain.clone());
    }

    // Constraints: params are declared variables, bodies parse and
    // type-check over the universe.
    let mut constraints: IndexMap<String, ConstraintDef> = IndexMap::new();
    for (name, rc) in &raw.constraints {
        for p in &rc.params {
            if !variables.contains_key(p) {
                return Err(SpecError::UnknownParam {
                    constraint: name.clone(),
                    param: p.clone(),
                });
            }
        }
        let def = ConstraintDef::parse(name.clone(), rc.params.clone(), &rc.body, &universe)
            .map_err(|source| SpecError::Body {
                constraint: name.clone(),
                source,
            })?;
        constraints.insert(name.clone(), def);
    }

    // Formula over the declared constraint names.
    let known: BTreeSet<String> = constraints.keys().cloned().collect();
    let formula = parse_formula(&raw.formula, &known)?;

    // Streams: validate and apply syntactic substitution.
    let mut streams: Vec<StreamMap> = Vec::new();
    for rs in &raw.streams {
        let def = constraints
            .get(&rs.atom)
            .ok_or_else(|| SpecError::Stream {
                atom: rs.atom.clone(),
                message: "unknown constraint".into(),
            })?
            .clone();
        let mut bindings = IndexMap::new();
        for (var, rb) in &rs.bindings {
            if !def.params.contains(var) {
                return Err(SpecError::Stream {
                    atom: rs.atom.clone(),
                    message: format!("bound variable `{var}` is not in the signature"),
                });
            }
            let (domain, direction) = match rb {
                RawBinding::Plain(d) => (d.clone(), None),
                RawBinding::Full { domain, direction } => (domain.clone(), *direction),
            };
            if !domains.iter().any(|d| d.name == domain) {
                return Err(SpecError::Stream {
                    atom: rs.atom.clone(),
                    message: format!("unknown domain `{domain}`"),
                });
            }
            bindings.insert(var.clone(), (domain, direction));
        }
        streams.push(StreamMap {
            atom: rs.atom.clone(),
            occurrence: rs.occurrence,
            bindings,
        });
    }
    let (formula, variables, constraints) =
        apply_streams(formula, variables, constraints, &streams)?;

    // Mode-specific shape.
    let length = match (&raw.mode, &raw.length) {
        (Mode::Sequential, RawLength::Range { min, max }) => {
            if *min == 0 {
                return Err(SpecError::ZeroLength);
            }
            if min > max {
                return Err(SpecError::MinAboveMax {
                    min: *min,
                    max: *max,
                });
            }
            LengthSpec::Range {
                min: *min,
                max: *max,
            }
        }
        (Mode::Incremental, RawLength::Episodes { episodes }) => {
            if *episodes == 0 {
                return Err(SpecError::ZeroLength);
            }
            LengthSpec::Episodes(*episodes)
        }
        (Mode::Sequential, _) => {
            return Err(SpecError::ModeMismatch {
                mode: "sequential",
                requirement: "a {min, max} length range",
            })
        }
        (Mode::Incremental, _) => {
            return Err(SpecError::ModeMismatch {
                mode: "incremental",
                requirement: "an {episodes} length",
            })
        }
    };
    let counts = match (&raw.mode, &raw.counts) {
        (Mode::Sequential, RawCounts::PerSplit(m)) => {
            if m.is_empty() {
                return Err(SpecError::Counts("at least one split is required".into()));
            }
            CountSpec::PerSplit(m.clone())
        }
        (Mode::Incremental, RawCounts::Episodes {
            per_episode,
            fractions,
        }) => {
            if fractions.is_empty() {
                return Err(SpecError::Counts("at least one split fraction".into()));
            }
            let sum: f64 = fractions.values().sum();
            if fractions.values().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(SpecError::Counts(format!(
                    "split fractions must be non-negative and sum to 1 (got {sum})"
                )));
            }
            CountSpec::Episodes {
                per_episode: *per_episode,
                fractions: fractions.clone(),
            }
        }
        (Mode::Sequential, _) => {
            return Err(SpecError::ModeMismatch {
                mode: "sequential",
                requirement: "per-split sequence counts",
            })
        }
        (Mode::Incremental, _) => {
            return Err(SpecError::ModeMismatch {
                mode: "incremental",
                requirement: "{per_episode, fractions} counts",
            })
        }
    };

    let rb = raw.bias.clone().unwrap_or_default();
    if !rb.self_loop_decay.is_finite() || rb.self_loop_decay < 0.0 {
        return Err(SpecError::Bias(format!(
            "self_loop_decay {} must be finite and >= 0",
            rb.self_loop_decay
        )));
    }
    if !rb.sink_decay.is_finite() || rb.sink_decay < 0.0 {
        return Err(SpecError::Bias(format!(
            "sink_decay {} must be finite and >= 0",
            rb.sink_decay
        )));
    }
    let bias = BiasOptions {
        self_loop_decay: rb.self_loop_decay,
        sink_decay: rb.sink_decay,
        orphan_coverage: rb.orphan_coverage.unwrap_or(OrphanCoverage::Off),
    };
    let orphan_positive_ratio = raw.orphan_positive_ratio.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&orphan_positive_ratio) {
        return Err(SpecError::RatioOutOfRange(orphan_positive_ratio));
    }

    // Resolved constraint system over post-substitution variables.
    let mut var_domains: IndexMap<String, Vec<i64>> = IndexMap::new();
    for (var, dname) in &variables {
        let d = domains.iter().find(|d| d.name == *dname).unwrap();
        var_domains.insert(var.clone(), d.values(&universe));
    }
    let system = ConstraintSystem::new(var_domains, constraints, universe);

    Ok(TaskSpec {
        name: raw.name.clone(),
        mode: raw.mode,
        seed: raw.seed,
        domains,
        variables,
        streams,
        length,
        counts,
        balance: raw.balance.unwrap_or(Balance::Balanced),
        bias,
        orphan_positive_ratio,
        formula,
        system,
        raw,
    })
}

/// Replace streamed atom occurrences with fresh constraints over fresh
/// variables. Occurrence `k` of atom `c` becomes `c__k`; a parameter `V`
/// bound to a new domain becomes the fresh variable `V__{c}{k}`. Unbound
/// parameters keep the original shared variable.
fn apply_streams(
    formula: Formula,
    mut variables: IndexMap<String, String>,
    mut constraints: IndexMap<String, ConstraintDef>,
    streams: &[StreamMap],
) -> Result<(Formula, IndexMap<String, String>, IndexMap<String, ConstraintDef>), SpecError> {
    if streams.is_empty() {
        return Ok((formula, variables, constraints));
    }
    let mut occurrence_counts: IndexMap<String, u32> = IndexMap::new();
    let formula = substitute(
        &formula,
        &mut occurrence_counts,
        &mut |atom, occurrence| {
            let Some(stream) = streams
                .iter()
                .find(|s| s.atom == atom && s.occurrence == occurrence)
            else {
                return Ok(atom.to_string());
            };
            let fresh_name = format!("{atom}__{occurrence}");
            if constraints.contains_key(&fresh_name) {
                return Err(SpecError::Stream {
                    atom: atom.to_string(),
                    message: format!("substituted name `{fresh_name}` collides with a declared constraint"),
                });
            }
            let base = constraints.get(atom).expect("atom validated").clone();
            let mut params = Vec::with_capacity(base.params.len());
            for p in &base.params {
                match stream.bindings.get(p) {
                    Some((domain, _)) => {
                        let fresh_var = format!("{p}__{atom}{occurrence}");
                        if variables.contains_key(&fresh_var) && variables[&fresh_var] != *domain {
                            return Err(SpecError::Stream {
                                atom: atom.to_string(),
                                message: format!(
                                    "substituted variable `{fresh_var}` collides with a declared variable"
                                ),
                            });
                        }
                        variables.insert(fresh_var.clone(), domain.clone());
                        params.push(fresh_var);
                    }
                    None => params.push(p.clone()),
                }
            }
            constraints.insert(
                fresh_name.clone(),
                ConstraintDef {
                    name: fresh_name.clone(),
                    params,
                    body: base.body,
                },
            );
            Ok(fresh_name)
        },
    )?;

    // Drop original constraints no longer referenced by the formula; orphans
    // (never streamed, never in the formula) are kept.
    let used = formula.atoms();
    let streamed: BTreeSet<&str> = streams.iter().map(|s| s.atom.as_str()).collect();
    constraints.retain(|name, _| used.contains(name) || !streamed.contains(name.as_str()));
    Ok((formula, variables, constraints))
}

fn substitute(
    f: &Formula,
    seen: &mut IndexMap<String, u32>,
    rename: &mut impl FnMut(&str, u32) -> Result<String, SpecError>,
) -> Result<Formula, SpecError> {
    Ok(match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Atom(a) => {
            let k = seen.entry(a.clone()).or_insert(0);
            let occurrence = *k;
            *k += 1;
            Formula::Atom(rename(a, occurrence)?)
        }
        Formula::Not(g) => Formula::not(substitute(g, seen, rename)?),
        Formula::And(l, r) => {
            Formula::and(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
        Formula::Or(l, r) => {
            Formula::or(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
        Formula::Implies(l, r) => {
            Formula::implies(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
        Formula::Iff(l, r) => {
            Formula::iff(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
        Formula::Next(g) => Formula::next(substitute(g, seen, rename)?),
        Formula::WeakNext(g) => Formula::weak_next(substitute(g, seen, rename)?),
        Formula::Globally(g) => Formula::globally(substitute(g, seen, rename)?),
        Formula::Finally(g) => Formula::finally(substitute(g, seen, rename)?),
        Formula::Until(l, r) => {
            Formula::until(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
        Formula::Release(l, r) => {
            Formula::release(substitute(l, seen, rename)?, substitute(r, seen, rename)?)
        }
    })
}

// ---------------------------------------------------------------------------
// Bundled tasks
// ---------------------------------------------------------------------------

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../specs/", $name, ".spec")))),*]
    };
}

/// Name and source text of every bundled spec: six sequence-classification
/// tasks in short and long variants, plus four class-continual curricula.
pub const BUNDLED_SPECS: &[(&str, &str)] = bundled![
    "task1_short",
    "task1_long",
    "task2_short",
    "task2_long",
    "task3_short",
    "task3_long",
    "task4_short",
    "task4_long",
    "task5_short",
    "task5_long",
    "task6_short",
    "task6_long",
    "ccl_task1_mnist",
    "ccl_task1_cifar100",
    "ccl_task2_mnist",
    "ccl_task2_cifar100",
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED_SPECS.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_spec_text(name: &str) -> Option<&'static str> {
    BUNDLED_SPECS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
}

/// Load every bundled spec. The bundled documents are validated by tests, so
/// loading cannot fail.
pub fn bundled_tasks() -> Vec<TaskSpec> {
    BUNDLED_SPECS
        .iter()
        .map(|(name, text)| {
            load_spec(text).unwrap_or_else(|e| panic!("bundled spec {name} is invalid: {e}"))
        })
        .collect()
}
