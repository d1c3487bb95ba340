//! Turn walks and curricula into concrete datasets on disk.
//!
//! Binding resolves each symbolic step into image references (drawn with
//! replacement from per-split manifest pools, or a `-` placeholder for
//! synthetic label-only domains). Emission writes per-split CSVs with full
//! annotations plus a JSON-lines mirror, the automaton in JSON and DOT, a
//! copy of the spec, and a run manifest with content digests. [`validate`]
//! re-derives every annotation of an emitted dataset independently and
//! reports each mismatch with coordinates.

mod validate;

pub use validate::{stats, validate, SplitStats, StatsReport, ValidationReport, Violation};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::csp::{CacheStats, CspError, SolutionCache};
use crate::sampler::{
    episode_pattern, sample_curriculum, sample_sequential_dataset, Curriculum, PoolFeasibility,
    SampleError, WalkResult,
};
use crate::sfa::{Sfa, SfaError, StateId};
use crate::spec::{CountSpec, Mode, SpecError, TaskSpec};
use crate::stream_rng::derive;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Sfa(#[from] SfaError),
    #[error(transparent)]
    Csp(#[from] CspError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("domain `{domain}` has no manifest for split `{split}`")]
    MissingManifest { domain: String, split: String },
    #[error("domain `{domain}`, split `{split}`: no images with label `{label}`")]
    EmptyLabelPool {
        domain: String,
        split: String,
        label: String,
    },
    #[error("generated dataset failed validation with {0} violation(s)")]
    ValidationFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One variable at one step: image reference, symbolic label, relevance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VarCell {
    pub image: String,
    pub label: String,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintCell {
    pub truth: bool,
    pub relevant: bool,
}

/// One step of an annotated sequence; `vars` and `constraints` follow the
/// spec's declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub state_from: StateId,
    pub state_to: StateId,
    pub vars: IndexMap<String, VarCell>,
    pub constraints: IndexMap<String, ConstraintCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SequenceRecord {
    pub seq_id: u64,
    pub label: bool,
    pub steps: Vec<StepRecord>,
}

/// One episode of an incremental dataset: the constraint pattern every
/// sample satisfies, plus per-split samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeRecord {
    pub index: u32,
    pub state_from: StateId,
    pub state_to: StateId,
    pub truths: BTreeMap<String, bool>,
    pub orphan: Option<String>,
    /// split -> samples; each sample is (image, label) per variable in
    /// declaration order.
    pub samples: IndexMap<String, Vec<Vec<(String, String)>>>,
}

// ---------------------------------------------------------------------------
// Domain binding
// ---------------------------------------------------------------------------

const SYNTHETIC_REF: &str = "-";

/// Per (domain, split) pools of image references keyed by label value.
pub struct DomainBinding {
    pools: BTreeMap<(String, String), BTreeMap<i64, Vec<String>>>,
}

impl DomainBinding {
    /// Label-only binding: every reference is `-`.
    pub fn synthetic() -> Self {
        DomainBinding {
            pools: BTreeMap::new(),
        }
    }

    /// Read the manifests declared by the spec's domains (CSV, header
    /// `label,image`), resolving relative paths against `data_root`.
    pub fn from_manifests(spec: &TaskSpec, data_root: &Path) -> Result<Self, DataError> {
        let mut pools = BTreeMap::new();
        let universe = spec.system().universe().clone();
        for domain in &spec.domains {
            for (split, file) in &domain.sources {
                let path = data_root.join(file);
                let mut reader = csv::Reader::from_path(&path).map_err(|e| {
                    DataError::Malformed {
                        path: path.clone(),
                        message: e.to_string(),
                    }
                })?;
                let mut pool: BTreeMap<i64, Vec<String>> = BTreeMap::new();
                for row in reader.records() {
                    let row = row.map_err(|e| DataError::Malformed {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    let label = row.get(0).unwrap_or_default();
                    let image = row.get(1).unwrap_or_default();
                    let value = domain.value_of(label, &universe).ok_or_else(|| {
                        DataError::Malformed {
                            path: path.clone(),
                            message: format!(
                                "label `{label}` is not in domain `{}`",
                                domain.name
                            ),
                        }
                    })?;
                    pool.entry(value).or_default().push(image.to_string());
                }
                pools.insert((domain.name.clone(), split.clone()), pool);
            }
        }
        Ok(DomainBinding { pools })
    }

    /// Draw one image reference for a label, uniformly with replacement.
    fn sample_ref<R: Rng + ?Sized>(
        &self,
        spec: &TaskSpec,
        domain: &str,
        split: &str,
        value: i64,
        rng: &mut R,
    ) -> Result<String, DataError> {
        let def = spec.domain(domain).expect("domain declared");
        if def.is_synthetic() {
            return Ok(SYNTHETIC_REF.to_string());
        }
        let key = (domain.to_string(), split.to_string());
        let pool = self
            .pools
            .get(&key)
            .ok_or_else(|| DataError::MissingManifest {
                domain: domain.to_string(),
                split: split.to_string(),
            })?;
        let refs = pool.get(&value).filter(|r| !r.is_empty()).ok_or_else(|| {
            DataError::EmptyLabelPool {
                domain: domain.to_string(),
                split: split.to_string(),
                label: def.label_of(value, spec.system().universe()),
            }
        })?;
        Ok(refs[rng.random_range(0..refs.len())].clone())
    }
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

/// Ground sequential walks: one solution per step from the guard's pool,
/// uniform fill of irrelevant variables, image references per variable.
/// Each sequence uses its own stream derived from `(seed, split, index)`.
pub fn bind_walks(
    spec: &TaskSpec,
    walks: &BTreeMap<String, Vec<WalkResult>>,
    binding: &DomainBinding,
    cache: &SolutionCache,
) -> Result<BTreeMap<String, Vec<SequenceRecord>>, DataError> {
    let system = spec.system();
    let mut out = BTreeMap::new();
    for (split, split_walks) in walks {
        let records: Result<Vec<SequenceRecord>, DataError> = split_walks
            .par_iter()
            .enumerate()
            .map(|(i, walk)| {
                let mut rng = derive(spec.seed, &["bind", split, &i.to_string()]);
                let mut steps = Vec::with_capacity(walk.steps.len());
                for ws in &walk.steps {
                    let pool = cache.get(system, &ws.guard)?;
                    let sampled = system.sample_from_pool(&pool, &mut rng)?;
                    let mut vars = IndexMap::new();
                    for var in system.variables().keys() {
                        let value = sampled.assignment[var];
                        let domain = spec.variables[var].clone();
                        let def = spec.domain(&domain).expect("domain declared");
                        let image =
                            binding.sample_ref(spec, &domain, split, value, &mut rng)?;
                        vars.insert(
                            var.clone(),
                            VarCell {
                                image,
                                label: def.label_of(value, system.universe()),
                                relevant: sampled.variable_relevance[var],
                            },
                        );
                    }
                    let mut constraints = IndexMap::new();
                    for name in system.constraints().keys() {
                        constraints.insert(
                            name.clone(),
                            ConstraintCell {
                                truth: sampled.truths[name],
                                relevant: sampled.constraint_relevance[name],
                            },
                        );
                    }
                    steps.push(StepRecord {
                        state_from: ws.from,
                        state_to: ws.to,
                        vars,
                        constraints,
                    });
                }
                Ok(SequenceRecord {
                    seq_id: i as u64,
                    label: walk.target_label,
                    steps,
                })
            })
            .collect();
        out.insert(split.clone(), records?);
    }
    Ok(out)
}

/// Ground a curriculum: per episode and split, draw samples that realize the
/// episode's constraint pattern exactly. In an episode with a scheduled
/// orphan, each sample is forced orphan-positive with probability
/// `orphan_positive_ratio` and orphan-negative otherwise (pattern-only when
/// the forced pattern is infeasible).
pub fn bind_curriculum(
    spec: &TaskSpec,
    curriculum: &Curriculum,
    binding: &DomainBinding,
    cache: &SolutionCache,
) -> Result<Vec<EpisodeRecord>, DataError> {
    let system = spec.system();
    let split_counts = spec.counts.episode_split_counts();
    curriculum
        .episodes
        .par_iter()
        .enumerate()
        .map(|(t, plan)| {
            let mut samples: IndexMap<String, Vec<Vec<(String, String)>>> = IndexMap::new();
            for (split, &count) in &split_counts {
                let mut rng = derive(spec.seed, &["episode", &t.to_string(), split]);
                let mut rows = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let pattern = match &plan.orphan {
                        Some(orphan) => {
                            let positive = rng.random::<f64>() < spec.orphan_positive_ratio;
                            let forced =
                                episode_pattern(plan, Some((orphan.as_str(), positive)));
                            let pool = cache.get(system, &forced)?;
                            if pool.is_empty() {
                                episode_pattern(plan, None)
                            } else {
                                forced
                            }
                        }
                        None => episode_pattern(plan, None),
                    };
                    let pool = cache.get(system, &pattern)?;
                    let sampled = system.sample_from_pool(&pool, &mut rng)?;
                    let mut cells = Vec::with_capacity(system.variables().len());
                    for var in system.variables().keys() {
                        let value = sampled.assignment[var];
                        let domain = spec.variables[var].clone();
                        let def = spec.domain(&domain).expect("domain declared");
                        let image =
                            binding.sample_ref(spec, &domain, split, value, &mut rng)?;
                        cells.push((image, def.label_of(value, system.universe())));
                    }
                    rows.push(cells);
                }
                samples.insert(split.clone(), rows);
            }
            Ok(EpisodeRecord {
                index: t as u32,
                state_from: plan.from,
                state_to: plan.to,
                truths: plan.truths.clone(),
                orphan: plan.orphan.clone(),
                samples,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Run manifest: seed, tool version, content digests of every emitted file,
/// cache statistics, and wall clock. Digests are recomputable from the
/// outputs; the wall clock is informational and excluded from determinism
/// comparisons.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub spec_digest: String,
    pub files: BTreeMap<String, String>,
    pub cache: CacheStats,
    pub wall_clock_ms: u64,
}

fn digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let hex: String = out.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

struct Emitter<'a> {
    out_dir: &'a Path,
    files: BTreeMap<String, String>,
}

impl<'a> Emitter<'a> {
    fn new(out_dir: &'a Path) -> Result<Self, DataError> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        Ok(Emitter {
            out_dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), DataError> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.insert(rel.to_string(), digest(bytes));
        Ok(())
    }
}

fn sequential_headers(spec: &TaskSpec) -> Vec<String> {
    let mut headers = vec![
        "seq_id".to_string(),
        "t".to_string(),
        "seq_label".to_string(),
        "state_from".to_string(),
        "state_to".to_string(),
    ];
    for var in spec.system().variables().keys() {
        headers.push(format!("img_{var}"));
        headers.push(format!("lbl_{var}"));
        headers.push(format!("rel_{var}"));
    }
    for name in spec.system().constraints().keys() {
        headers.push(format!("c_{name}"));
        headers.push(format!("rel_{name}"));
    }
    headers
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn sequential_csv(spec: &TaskSpec, records: &[SequenceRecord]) -> Result<Vec<u8>, DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(sequential_headers(spec)).expect("csv row");
    for record in records {
        for (t, step) in record.steps.iter().enumerate() {
            let mut row: Vec<String> = vec![
                record.seq_id.to_string(),
                t.to_string(),
                bit(record.label).to_string(),
                step.state_from.to_string(),
                step.state_to.to_string(),
            ];
            for cell in step.vars.values() {
                row.push(cell.image.clone());
                row.push(cell.label.clone());
                row.push(bit(cell.relevant).to_string());
            }
            for cell in step.constraints.values() {
                row.push(bit(cell.truth).to_string());
                row.push(bit(cell.relevant).to_string());
            }
            w.write_record(&row).expect("csv row");
        }
    }
    Ok(w.into_inner().expect("csv buffer"))
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        out.extend_from_slice(serde_json::to_string(item).expect("serializable").as_bytes());
        out.push(b'\n');
    }
    out
}

/// Serialized curriculum: state trace, per-episode guards, constraint
/// truths, and the orphan schedule.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct CurriculumDoc {
    pub states: Vec<StateId>,
    pub guards: Vec<String>,
    pub constraint_truths: Vec<BTreeMap<String, bool>>,
    pub orphan_schedule: BTreeMap<String, u32>,
}

fn episode_dir(index: u32) -> String {
    format!("episode_{index:02}")
}

fn episode_csv(spec: &TaskSpec, rows: &[Vec<(String, String)>]) -> Vec<u8> {
    let vars: Vec<&String> = spec.system().variables().keys().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["sample_id".to_string()];
    if vars.len() == 1 {
        headers.push("img".to_string());
        headers.push("label".to_string());
    } else {
        for var in &vars {
            headers.push(format!("img_{var}"));
            headers.push(format!("lbl_{var}"));
        }
    }
    w.write_record(&headers).expect("csv row");
    for (i, cells) in rows.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for (image, label) in cells {
            row.push(image.clone());
            row.push(label.clone());
        }
        w.write_record(&row).expect("csv row");
    }
    w.into_inner().expect("csv buffer")
}

fn finish_manifest(
    spec: &TaskSpec,
    mut emitter: Emitter,
    cache: &SolutionCache,
) -> Result<RunManifest, DataError> {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: spec.seed,
        spec_digest: digest(spec.to_json().as_bytes()),
        files: emitter.files.clone(),
        cache: cache.stats(),
        wall_clock_ms: 0,
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    emitter.write("manifest.json", &bytes)?;
    Ok(manifest)
}

/// Write a sequential dataset: `spec.json`, `automaton.json`, adjacency DOT,
/// one CSV and JSON-lines mirror per split, and `manifest.json`.
pub fn emit_sequential(
    spec: &TaskSpec,
    sfa: &Sfa,
    records: &BTreeMap<String, Vec<SequenceRecord>>,
    cache: &SolutionCache,
    out_dir: &Path,
) -> Result<RunManifest, DataError> {
    let mut emitter = Emitter::new(out_dir)?;
    emitter.write("spec.json", spec.to_json().as_bytes())?;
    emitter.write("automaton.json", sfa.to_json().as_bytes())?;
    emitter.write("automaton.dot", sfa.to_dot().as_bytes())?;
    for (split, split_records) in records {
        emitter.write(&format!("{split}.csv"), &sequential_csv(spec, split_records)?)?;
        emitter.write(&format!("{split}.jsonl"), &jsonl(split_records))?;
    }
    finish_manifest(spec, emitter, cache)
}

/// Write an incremental dataset: the shared artifacts plus
/// `curriculum.json` and one directory per episode with per-split CSVs.
pub fn emit_incremental(
    spec: &TaskSpec,
    sfa: &Sfa,
    episodes: &[EpisodeRecord],
    cache: &SolutionCache,
    out_dir: &Path,
) -> Result<RunManifest, DataError> {
    let mut emitter = Emitter::new(out_dir)?;
    emitter.write("spec.json", spec.to_json().as_bytes())?;
    emitter.write("automaton.json", sfa.to_json().as_bytes())?;
    emitter.write("automaton.dot", sfa.to_dot().as_bytes())?;
    let doc = CurriculumDoc {
        states: std::iter::once(episodes.first().map(|e| e.state_from).unwrap_or_default())
            .chain(episodes.iter().map(|e| e.state_to))
            .collect(),
        guards: episodes
            .iter()
            .map(|e| {
                sfa.guard_between(e.state_from, e.state_to)
                    .expect("episode transition exists")
                    .to_text()
            })
            .collect(),
        constraint_truths: episodes.iter().map(|e| e.truths.clone()).collect(),
        orphan_schedule: episodes
            .iter()
            .filter_map(|e| e.orphan.clone().map(|o| (o, e.index)))
            .collect(),
    };
    emitter.write(
        "curriculum.json",
        &serde_json::to_vec_pretty(&doc).expect("curriculum serializes"),
    )?;
    for episode in episodes {
        let dir = episode_dir(episode.index);
        for (split, rows) in &episode.samples {
            emitter.write(&format!("{dir}/{split}.csv"), &episode_csv(spec, rows))?;
            emitter.write(&format!("{dir}/{split}.jsonl"), &jsonl(rows))?;
        }
    }
    finish_manifest(spec, emitter, cache)
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Compile, sample, bind, emit, and validate in one call. The emitted
/// dataset is re-validated from disk before success is reported.
pub fn generate(
    spec: &TaskSpec,
    out_dir: &Path,
    data_root: Option<&Path>,
) -> Result<RunManifest, DataError> {
    generate_with_cache_cap(spec, out_dir, data_root, None)
}

/// [`generate`] with a cap on the total number of cached solutions.
pub fn generate_with_cache_cap(
    spec: &TaskSpec,
    out_dir: &Path,
    data_root: Option<&Path>,
    cache_cap: Option<u64>,
) -> Result<RunManifest, DataError> {
    let started = std::time::Instant::now();
    let sfa = spec.compile()?;
    let cache = match cache_cap {
        Some(cap) => SolutionCache::with_solution_cap(cap),
        None => SolutionCache::new(),
    };
    let binding = match data_root {
        Some(root) if spec.domains.iter().any(|d| !d.is_synthetic()) => {
            DomainBinding::from_manifests(spec, root)?
        }
        _ => DomainBinding::synthetic(),
    };
    let mut manifest = match spec.mode {
        Mode::Sequential => {
            let feasibility = PoolFeasibility {
                system: spec.system(),
                cache: &cache,
            };
            let walks = sample_sequential_dataset(spec, &sfa, &feasibility)?;
            let records = bind_walks(spec, &walks, &binding, &cache)?;
            emit_sequential(spec, &sfa, &records, &cache, out_dir)?
        }
        Mode::Incremental => {
            let curriculum = sample_curriculum(spec, &sfa, &cache)?;
            let episodes = bind_curriculum(spec, &curriculum, &binding, &cache)?;
            emit_incremental(spec, &sfa, &episodes, &cache, out_dir)?
        }
    };
    let report = validate(out_dir)?;
    if !report.violations.is_empty() {
        return Err(DataError::ValidationFailed(report.violations.len()));
    }
    manifest.wall_clock_ms = started.elapsed().as_millis() as u64;
    Ok(manifest)
}

// Split names in a stable order for readers.
pub(crate) fn split_names(spec: &TaskSpec) -> Vec<String> {
    match &spec.counts {
        CountSpec::PerSplit(m) => m.keys().cloned().collect(),
        CountSpec::Episodes { fractions, .. } => fractions.keys().cloned().collect(),
    }
}

#[cfg(test)]
mod tests;
