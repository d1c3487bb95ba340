//! Python bindings: formulas, automata, task specs, constraint solving,
//! probabilistic evaluation, and dataset generation.
//!
//! Build as a cdylib and import as `tracegen`; `python/smoke_test.py` at the
//! workspace root copies the shared object next to itself and exercises the
//! surface end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use tracegen_core::csp::SolutionCache;
use tracegen_core::datagen;
use tracegen_core::ltlf;
use tracegen_core::probeval;
use tracegen_core::sampler;
use tracegen_core::sfa;
use tracegen_core::spec;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_trace(steps: Vec<BTreeMap<String, bool>>) -> PyResult<ltlf::Trace> {
    ltlf::Trace::new(steps).map_err(value_err)
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

/// Temporal formula over named constraint atoms.
#[pyclass(frozen, name = "Formula")]
struct PyFormula {
    inner: ltlf::Formula,
}

#[pymethods]
impl PyFormula {
    /// Atom names appearing in the formula, sorted.
    fn atoms(&self) -> Vec<String> {
        self.inner.atoms().into_iter().collect()
    }

    /// Negation normal form over the core operator set.
    fn nnf(&self) -> PyFormula {
        PyFormula {
            inner: ltlf::to_nnf(&self.inner),
        }
    }

    /// ASCII rendering accepted back by `parse_formula`.
    fn ascii(&self) -> String {
        self.inner.to_ascii()
    }

    /// Satisfaction on a trace: a non-empty list of {atom: bool} steps.
    fn evaluate(&self, trace: Vec<BTreeMap<String, bool>>) -> PyResult<bool> {
        ltlf::eval_trace(&self.inner, &to_trace(trace)?).map_err(value_err)
    }

    /// Compile into a deterministic, complete, minimal symbolic automaton.
    fn compile(&self) -> PyResult<PyAutomaton> {
        Ok(PyAutomaton {
            inner: sfa::compile(&self.inner).map_err(value_err)?,
        })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Formula({:?})", self.inner.to_ascii())
    }
}

/// Parse the ASCII (or Unicode) formula syntax over the given atoms.
#[pyfunction]
fn parse_formula(text: &str, atoms: Vec<String>) -> PyResult<PyFormula> {
    let known: BTreeSet<String> = atoms.into_iter().collect();
    Ok(PyFormula {
        inner: ltlf::parse_formula(text, &known).map_err(value_err)?,
    })
}

/// Deterministic complete symbolic automaton with guard-labeled transitions.
#[pyclass(frozen, name = "Automaton")]
struct PyAutomaton {
    inner: sfa::Sfa,
}

#[pymethods]
impl PyAutomaton {
    #[getter]
    fn states(&self) -> usize {
        self.inner.state_count()
    }

    #[getter]
    fn initial(&self) -> usize {
        self.inner.initial()
    }

    #[getter]
    fn accepting(&self) -> Vec<usize> {
        self.inner.accepting().iter().copied().collect()
    }

    #[getter]
    fn atoms(&self) -> Vec<String> {
        self.inner.atoms().to_vec()
    }

    /// Transitions as (from, guard_text, to) triples.
    fn transitions(&self) -> Vec<(usize, String, usize)> {
        let mut out = Vec::new();
        for s in 0..self.inner.state_count() {
            for (guard, to) in self.inner.transitions_from(s) {
                out.push((s, guard.to_text(), *to));
            }
        }
        out
    }

    /// Run a trace; returns (state_trace, accepted).
    fn run(&self, trace: Vec<BTreeMap<String, bool>>) -> PyResult<(Vec<usize>, bool)> {
        let outcome = self.inner.run(&to_trace(trace)?).map_err(value_err)?;
        Ok((outcome.states, outcome.accepted))
    }

    /// Exhaustively compare with a formula on all traces up to `max_len`.
    fn check_equiv(&self, formula: &PyFormula, max_len: usize) -> PyResult<bool> {
        sfa::check_equiv(&self.inner, &formula.inner, max_len).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_dot(&self) -> String {
        self.inner.to_dot()
    }

    fn __repr__(&self) -> String {
        format!(
            "Automaton(states={}, accepting={:?})",
            self.inner.state_count(),
            self.accepting()
        )
    }
}

/// Compile a formula into its minimal automaton.
#[pyfunction]
fn compile(formula: &PyFormula) -> PyResult<PyAutomaton> {
    formula.compile()
}

/// A validated task specification.
#[pyclass(frozen, name = "TaskSpec")]
struct PyTaskSpec {
    inner: spec::TaskSpec,
}

impl PyTaskSpec {
    fn resolve_assignment(
        &self,
        assignment: BTreeMap<String, Bound<'_, PyAny>>,
    ) -> PyResult<tracegen_core::csp::Assignment> {
        let universe = self.inner.system().universe();
        let mut out = tracegen_core::csp::Assignment::new();
        for (var, value) in assignment {
            let v = if let Ok(i) = value.extract::<i64>() {
                i
            } else {
                let label: String = value.extract()?;
                let def = self
                    .inner
                    .domain_of_var(&var)
                    .ok_or_else(|| value_err(format!("unknown variable {var}")))?;
                def.value_of(&label, universe)
                    .ok_or_else(|| value_err(format!("label `{label}` not in domain of {var}")))?
            };
            out.insert(var, v);
        }
        Ok(out)
    }
}

#[pymethods]
impl PyTaskSpec {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            spec::Mode::Sequential => "sequential",
            spec::Mode::Incremental => "incremental",
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn variables(&self) -> BTreeMap<String, String> {
        self.inner
            .variables
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    #[getter]
    fn constraints(&self) -> Vec<String> {
        self.inner.system().constraints().keys().cloned().collect()
    }

    /// Constraints declared but absent from the formula.
    #[getter]
    fn orphans(&self) -> Vec<String> {
        self.inner.orphans()
    }

    fn formula(&self) -> PyFormula {
        PyFormula {
            inner: self.inner.formula().clone(),
        }
    }

    fn compile(&self) -> PyResult<PyAutomaton> {
        Ok(PyAutomaton {
            inner: self.inner.compile().map_err(value_err)?,
        })
    }

    /// Truth of one constraint under {variable: label-or-int}.
    fn eval_constraint(
        &self,
        name: &str,
        assignment: BTreeMap<String, Bound<'_, PyAny>>,
    ) -> PyResult<bool> {
        let a = self.resolve_assignment(assignment)?;
        self.inner
            .system()
            .eval_constraint(name, &a)
            .map_err(value_err)
    }

    /// All solutions of a guard over the declared constraints, as
    /// {variable: label} dicts covering the guard-relevant variables.
    fn solutions(&self, guard: &str) -> PyResult<Vec<BTreeMap<String, String>>> {
        let known: BTreeSet<String> =
            self.inner.system().constraints().keys().cloned().collect();
        let guard = sfa::Guard::parse(guard, &known).map_err(value_err)?;
        let pool = self.inner.system().solve_all(&guard).map_err(value_err)?;
        let universe = self.inner.system().universe();
        Ok(pool
            .solutions
            .iter()
            .map(|(values, _)| {
                pool.vars
                    .iter()
                    .zip(values)
                    .map(|(var, v)| {
                        let def = self.inner.domain_of_var(var).expect("declared variable");
                        (var.clone(), def.label_of(*v, universe))
                    })
                    .collect()
            })
            .collect())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn with_seed(&self, seed: u64) -> PyTaskSpec {
        PyTaskSpec {
            inner: self.inner.clone().with_seed(seed),
        }
    }

    fn __repr__(&self) -> String {
        format!("TaskSpec(name={:?}, mode={:?})", self.inner.name, self.mode())
    }
}

/// Parse and validate a spec document.
#[pyfunction]
fn load_spec(text: &str) -> PyResult<PyTaskSpec> {
    Ok(PyTaskSpec {
        inner: spec::load_spec(text).map_err(value_err)?,
    })
}

/// Every bundled task specification.
#[pyfunction]
fn bundled_tasks() -> Vec<PyTaskSpec> {
    spec::bundled_tasks()
        .into_iter()
        .map(|inner| PyTaskSpec { inner })
        .collect()
}

#[pyfunction]
fn bundled_names() -> Vec<String> {
    spec::bundled_names().iter().map(|s| s.to_string()).collect()
}

#[pyfunction]
fn bundled_spec_text(name: &str) -> PyResult<String> {
    spec::bundled_spec_text(name)
        .map(|s| s.to_string())
        .ok_or_else(|| value_err(format!("no bundled task named {name}")))
}

fn dists_for(
    spec: &spec::TaskSpec,
    dists: BTreeMap<String, Vec<f64>>,
) -> PyResult<BTreeMap<String, probeval::CategoricalDist>> {
    let mut out = BTreeMap::new();
    for (var, probs) in dists {
        let values = spec
            .system()
            .variables()
            .get(&var)
            .ok_or_else(|| value_err(format!("unknown variable {var}")))?
            .clone();
        out.insert(
            var.clone(),
            probeval::CategoricalDist::new(&var, values, probs).map_err(value_err)?,
        );
    }
    Ok(out)
}

/// Exact constraint probability under per-variable categorical
/// distributions (aligned with the variable's domain order).
#[pyfunction]
fn constraint_prob_exact(
    spec: &PyTaskSpec,
    name: &str,
    dists: BTreeMap<String, Vec<f64>>,
) -> PyResult<f64> {
    let c = spec.inner.system().constraint(name).map_err(value_err)?;
    let ds = dists_for(&spec.inner, dists)?;
    probeval::constraint_prob_exact(c, &ds).map_err(value_err)
}

/// Probability mass of the k most probable satisfying assignments.
#[pyfunction]
#[pyo3(signature = (spec, name, dists, k = 1))]
fn constraint_prob_topk(
    spec: &PyTaskSpec,
    name: &str,
    dists: BTreeMap<String, Vec<f64>>,
    k: usize,
) -> PyResult<f64> {
    let c = spec.inner.system().constraint(name).map_err(value_err)?;
    let ds = dists_for(&spec.inner, dists)?;
    probeval::constraint_prob_topk(c, &ds, k).map_err(value_err)
}

/// Factored transition probability: guard atoms as independent Bernoullis.
#[pyfunction]
fn guard_prob_factored(guard: &str, atom_probs: BTreeMap<String, f64>) -> PyResult<f64> {
    let known: BTreeSet<String> = atom_probs.keys().cloned().collect();
    let guard = sfa::Guard::parse(guard, &known).map_err(value_err)?;
    let probs = probeval::GuardAtomProbs::new(atom_probs).map_err(value_err)?;
    probeval::guard_prob_factored(&guard, &probs).map_err(value_err)
}

/// Joint-exact transition probability over the underlying variables.
#[pyfunction]
fn guard_prob_joint(
    spec: &PyTaskSpec,
    guard: &str,
    dists: BTreeMap<String, Vec<f64>>,
) -> PyResult<f64> {
    let known: BTreeSet<String> = spec.inner.system().constraints().keys().cloned().collect();
    let guard = sfa::Guard::parse(guard, &known).map_err(value_err)?;
    let constraints: BTreeMap<String, tracegen_core::csp::ConstraintDef> = spec
        .inner
        .system()
        .constraints()
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let ds = dists_for(&spec.inner, dists)?;
    probeval::guard_prob_joint(&guard, &constraints, &ds).map_err(value_err)
}

/// Acceptance probability after one factored transition step per entry.
#[pyfunction]
fn accept_prob(automaton: &PyAutomaton, steps: Vec<BTreeMap<String, f64>>) -> PyResult<f64> {
    let steps: Vec<probeval::GuardAtomProbs> = steps
        .into_iter()
        .map(|m| probeval::GuardAtomProbs::new(m).map_err(value_err))
        .collect::<PyResult<_>>()?;
    probeval::accept_prob(&automaton.inner, &steps).map_err(value_err)
}

/// Sample one positive curriculum for an incremental spec; returns
/// (state_trace, per-episode truth dicts).
#[pyfunction]
fn sample_curriculum(
    spec: &PyTaskSpec,
) -> PyResult<(Vec<usize>, Vec<BTreeMap<String, bool>>)> {
    let sfa = spec.inner.compile().map_err(value_err)?;
    let cache = SolutionCache::new();
    let cur = sampler::sample_curriculum(&spec.inner, &sfa, &cache).map_err(runtime_err)?;
    let truths = cur.episodes.iter().map(|e| e.truths.clone()).collect();
    Ok((cur.states, truths))
}

/// Generate a dataset; returns the run manifest as a dict. Always validates
/// the emitted files before returning.
#[pyfunction]
#[pyo3(signature = (spec, out_dir, data_root = None, workers = None))]
fn generate<'py>(
    py: Python<'py>,
    spec: &PyTaskSpec,
    out_dir: PathBuf,
    data_root: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let run = || datagen::generate(&spec.inner, &out_dir, data_root.as_deref());
    let manifest = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(runtime_err)?
            .install(run),
        None => run(),
    }
    .map_err(runtime_err)?;
    let value = serde_json::to_value(&manifest).map_err(runtime_err)?;
    json_to_py(py, &value)
}

/// Re-derive every annotation of an emitted dataset; returns the report as a
/// dict with a `violations` list.
#[pyfunction]
fn validate<'py>(py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = datagen::validate(&dir).map_err(runtime_err)?;
    let value = serde_json::to_value(&report).map_err(runtime_err)?;
    json_to_py(py, &value)
}

/// Dataset statistics as a dict.
#[pyfunction]
fn stats<'py>(py: Python<'py>, dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = datagen::stats(&dir).map_err(runtime_err)?;
    let value = serde_json::to_value(&report).map_err(runtime_err)?;
    json_to_py(py, &value)
}

#[pymodule]
fn tracegen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFormula>()?;
    m.add_class::<PyAutomaton>()?;
    m.add_class::<PyTaskSpec>()?;
    m.add_function(wrap_pyfunction!(parse_formula, m)?)?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(load_spec, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_names, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_spec_text, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_prob_exact, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_prob_topk, m)?)?;
    m.add_function(wrap_pyfunction!(guard_prob_factored, m)?)?;
    m.add_function(wrap_pyfunction!(guard_prob_joint, m)?)?;
    m.add_function(wrap_pyfunction!(accept_prob, m)?)?;
    m.add_function(wrap_pyfunction!(sample_curriculum, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
