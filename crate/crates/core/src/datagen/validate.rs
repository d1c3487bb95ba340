//! Independent re-derivation of every annotation in an emitted dataset.
//!
//! The ground truth of a record is its symbolic labels. The validator
//! recomputes constraint truths from the labels, the state trace from those
//! truths, the sequence label from acceptance, and the relevance flags from
//! the traversed guards, then compares each stored cell against the
//! recomputed value. Spec-level checks (counts, lengths, balance, split
//! disjointness, the formula over an episode trace) are reported in the same
//! way, each violation carrying its coordinates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::csp::Assignment;
use crate::ltlf::{eval_trace, Trace, Valuation};
use crate::sfa::Sfa;
use crate::spec::{load_spec, Balance, CountSpec, LengthSpec, Mode, TaskSpec};

use super::{split_names, DataError};

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub split: Option<String>,
    pub sequence: Option<u64>,
    pub step: Option<u64>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut loc: Vec<String> = Vec::new();
        if let Some(s) = &self.split {
            loc.push(format!("split={s}"));
        }
        if let Some(s) = self.sequence {
            loc.push(format!("seq={s}"));
        }
        if let Some(t) = self.step {
            loc.push(format!("t={t}"));
        }
        if let Some(c) = &self.column {
            loc.push(format!("column={c}"));
        }
        if loc.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "[{}] {}", loc.join(" "), self.message)
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct ValidationReport {
    pub sequences_checked: u64,
    pub episodes_checked: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(
        &mut self,
        split: Option<&str>,
        sequence: Option<u64>,
        step: Option<u64>,
        column: Option<String>,
        message: String,
    ) {
        self.violations.push(Violation {
            split: split.map(|s| s.to_string()),
            sequence,
            step,
            column,
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "checked {} sequences, {} episodes: {}",
            self.sequences_checked,
            self.episodes_checked,
            if self.violations.is_empty() {
                "clean".to_string()
            } else {
                format!("{} violation(s)", self.violations.len())
            }
        )?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_artifacts(dir: &Path) -> Result<(TaskSpec, Sfa), DataError> {
    let spec = load_spec(&read_to_string(&dir.join("spec.json"))?)?;
    let sfa = Sfa::from_json(&read_to_string(&dir.join("automaton.json"))?)?;
    Ok((spec, sfa))
}

struct CsvTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<CsvTable, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        rows.push(row.iter().map(|s| s.to_string()).collect());
    }
    Ok(CsvTable { headers, rows })
}

impl CsvTable {
    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Re-derive every annotation of an emitted dataset and report mismatches.
pub fn validate(dir: &Path) -> Result<ValidationReport, DataError> {
    let (spec, sfa) = load_artifacts(dir)?;
    let mut report = ValidationReport::default();
    match spec.mode {
        Mode::Sequential => validate_sequential(&spec, &sfa, dir, &mut report)?,
        Mode::Incremental => validate_incremental(&spec, &sfa, dir, &mut report)?,
    }
    Ok(report)
}

fn parse_bit(raw: &str) -> Option<bool> {
    match raw {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    }
}

fn validate_sequential(
    spec: &TaskSpec,
    sfa: &Sfa,
    dir: &Path,
    report: &mut ValidationReport,
) -> Result<(), DataError> {
    let system = spec.system();
    let universe = system.universe();
    let LengthSpec::Range { min, max } = spec.length else {
        return Ok(());
    };
    let CountSpec::PerSplit(counts) = &spec.counts else {
        return Ok(());
    };
    // (domain, refs) per side of the train/val vs test hygiene check.
    let mut trainval_refs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut test_refs: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

    for (split, &expected_count) in counts {
        let path = dir.join(format!("{split}.csv"));
        let table = read_csv(&path)?;
        let need = |name: &str| {
            table.col(name).ok_or_else(|| DataError::Malformed {
                path: path.clone(),
                message: format!("missing column {name}"),
            })
        };
        let c_seq = need("seq_id")?;
        let c_t = need("t")?;
        let c_label = need("seq_label")?;
        let c_from = need("state_from")?;
        let c_to = need("state_to")?;

        // Group rows by sequence, in file order.
        let mut sequences: Vec<(u64, Vec<&Vec<String>>)> = Vec::new();
        for row in &table.rows {
            let id: u64 = row[c_seq].parse().map_err(|_| DataError::Malformed {
                path: path.clone(),
                message: format!("bad seq_id `{}`", row[c_seq]),
            })?;
            match sequences.last_mut() {
                Some((last, rows)) if *last == id => rows.push(row),
                _ => sequences.push((id, vec![row])),
            }
        }

        if sequences.len() as u64 != expected_count {
            report.push(
                Some(split),
                None,
                None,
                None,
                format!(
                    "expected {expected_count} sequences, found {}",
                    sequences.len()
                ),
            );
        }

        let mut positives = 0u64;
        for (seq_id, rows) in &sequences {
            report.sequences_checked += 1;
            for (t, row) in rows.iter().enumerate() {
                if row[c_t] != t.to_string() {
                    report.push(
                        Some(split),
                        Some(*seq_id),
                        Some(t as u64),
                        Some("t".into()),
                        format!("expected step index {t}, found {}", row[c_t]),
                    );
                }
            }
            let n = rows.len() as u32;
            if n < min || n > max {
                report.push(
                    Some(split),
                    Some(*seq_id),
                    None,
                    None,
                    format!("length {n} outside [{min}, {max}]"),
                );
            }
            let stored_label = parse_bit(&rows[0][c_label]);
            if stored_label == Some(true) {
                positives += 1;
            }

            // Recompute from labels: assignments, truths, state trace.
            let mut assignments: Vec<Assignment> = Vec::with_capacity(rows.len());
            let mut ok = true;
            'rows: for (t, row) in rows.iter().enumerate() {
                let mut a = Assignment::new();
                for var in system.variables().keys() {
                    let col = match table.col(&format!("lbl_{var}")) {
                        Some(c) => c,
                        None => {
                            report.push(
                                Some(split),
                                Some(*seq_id),
                                None,
                                Some(format!("lbl_{var}")),
                                "missing column".to_string(),
                            );
                            ok = false;
                            break 'rows;
                        }
                    };
                    let def = spec.domain_of_var(var).expect("variable has a domain");
                    match def.value_of(&row[col], universe) {
                        Some(v) => {
                            a.insert(var.clone(), v);
                        }
                        None => {
                            report.push(
                                Some(split),
                                Some(*seq_id),
                                Some(t as u64),
                                Some(format!("lbl_{var}")),
                                format!("label `{}` not in domain", row[col]),
                            );
                            ok = false;
                            break 'rows;
                        }
                    }
                }
                assignments.push(a);
            }
            if !ok {
                continue;
            }

            // Truths from labels; compare each stored truth cell.
            let mut truth_trace: Vec<Valuation> = Vec::with_capacity(rows.len());
            for (t, (row, a)) in rows.iter().zip(&assignments).enumerate() {
                let mut val = Valuation::new();
                for name in system.constraints().keys() {
                    let truth = system.eval_constraint(name, a)?;
                    val.insert(name.clone(), truth);
                    if let Some(col) = table.col(&format!("c_{name}")) {
                        if parse_bit(&row[col]) != Some(truth) {
                            report.push(
                                Some(split),
                                Some(*seq_id),
                                Some(t as u64),
                                Some(format!("c_{name}")),
                                format!("stored truth {} but labels give {}", row[col], bit(truth)),
                            );
                        }
                    }
                }
                truth_trace.push(val);
            }

            // State trace from truths; compare state columns and label.
            let trace = Trace::new(truth_trace.clone()).expect("sequences are non-empty");
            let run = sfa.run(&trace)?;
            for (t, row) in rows.iter().enumerate() {
                if row[c_from] != run.states[t].to_string() {
                    report.push(
                        Some(split),
                        Some(*seq_id),
                        Some(t as u64),
                        Some("state_from".into()),
                        format!("stored {} but run gives {}", row[c_from], run.states[t]),
                    );
                }
                if row[c_to] != run.states[t + 1].to_string() {
                    report.push(
                        Some(split),
                        Some(*seq_id),
                        Some(t as u64),
                        Some("state_to".into()),
                        format!("stored {} but run gives {}", row[c_to], run.states[t + 1]),
                    );
                }
            }
            if stored_label != Some(run.accepted) {
                report.push(
                    Some(split),
                    Some(*seq_id),
                    None,
                    Some("seq_label".into()),
                    format!(
                        "stored {} but acceptance gives {}",
                        rows[0][c_label],
                        bit(run.accepted)
                    ),
                );
            }

            // Relevance flags from the traversed guards.
            for (t, row) in rows.iter().enumerate() {
                let guard = match sfa.guard_between(run.states[t], run.states[t + 1]) {
                    Some(g) => g,
                    None => continue,
                };
                let support = guard.support();
                let mut relevant_vars: BTreeSet<&str> = BTreeSet::new();
                for name in &support {
                    if let Ok(def) = system.constraint(name) {
                        relevant_vars.extend(def.params.iter().map(|p| p.as_str()));
                    }
                }
                for name in system.constraints().keys() {
                    if let Some(col) = table.col(&format!("rel_{name}")) {
                        let expect = support.contains(name);
                        if parse_bit(&row[col]) != Some(expect) {
                            report.push(
                                Some(split),
                                Some(*seq_id),
                                Some(t as u64),
                                Some(format!("rel_{name}")),
                                format!("stored {} but guard gives {}", row[col], bit(expect)),
                            );
                        }
                    }
                }
                for var in system.variables().keys() {
                    if let Some(col) = table.col(&format!("rel_{var}")) {
                        let expect = relevant_vars.contains(var.as_str());
                        if parse_bit(&row[col]) != Some(expect) {
                            report.push(
                                Some(split),
                                Some(*seq_id),
                                Some(t as u64),
                                Some(format!("rel_{var}")),
                                format!("stored {} but guard gives {}", row[col], bit(expect)),
                            );
                        }
                    }
                }
            }

            // Image-reference pools for the split-hygiene check.
            for var in system.variables().keys() {
                if let Some(col) = table.col(&format!("img_{var}")) {
                    let domain = spec.variables[var].clone();
                    let into = if split == "test" {
                        &mut test_refs
                    } else {
                        &mut trainval_refs
                    };
                    let set = into.entry(domain).or_default();
                    for row in rows {
                        if row[col] != super::SYNTHETIC_REF {
                            set.insert(row[col].clone());
                        }
                    }
                }
            }
        }

        if spec.balance == Balance::Balanced {
            let expected_pos = expected_count.div_ceil(2);
            if sequences.len() as u64 == expected_count && positives != expected_pos {
                report.push(
                    Some(split),
                    None,
                    None,
                    None,
                    format!("expected {expected_pos} positive sequences, found {positives}"),
                );
            }
        }
    }

    // Train/val and test pools must be disjoint when their manifests are.
    for (domain, refs) in &trainval_refs {
        let def = spec.domain(domain).expect("domain declared");
        let test_source = def.sources.get("test");
        let train_source = def.sources.get("train");
        if test_source.is_some() && test_source != train_source {
            if let Some(test) = test_refs.get(domain) {
                for r in refs.intersection(test) {
                    report.push(
                        None,
                        None,
                        None,
                        None,
                        format!("domain `{domain}`: image `{r}` appears in both train/val and test"),
                    );
                }
            }
        }
    }
    Ok(())
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn validate_incremental(
    spec: &TaskSpec,
    sfa: &Sfa,
    dir: &Path,
    report: &mut ValidationReport,
) -> Result<(), DataError> {
    let system = spec.system();
    let universe = system.universe();
    let LengthSpec::Episodes(episodes) = spec.length else {
        return Ok(());
    };
    let path = dir.join("curriculum.json");
    let doc: super::CurriculumDoc = serde_json::from_str(&read_to_string(&path)?)
        .map_err(|e| DataError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?;

    if doc.states.len() != episodes as usize + 1 {
        report.push(
            None,
            None,
            None,
            Some("states".into()),
            format!(
                "expected {} states in the trace, found {}",
                episodes + 1,
                doc.states.len()
            ),
        );
    }
    if doc.states.first() != Some(&sfa.initial()) {
        report.push(
            None,
            None,
            None,
            Some("states".into()),
            "state trace does not start at the initial state".to_string(),
        );
    }
    // Every consecutive pair must be a real transition whose guard admits the
    // episode's truth pattern.
    for (t, window) in doc.states.windows(2).enumerate() {
        match sfa.guard_between(window[0], window[1]) {
            None => report.push(
                None,
                None,
                Some(t as u64),
                Some("states".into()),
                format!("no transition {} -> {}", window[0], window[1]),
            ),
            Some(guard) => {
                if doc.guards.get(t) != Some(&guard.to_text()) {
                    report.push(
                        None,
                        None,
                        Some(t as u64),
                        Some("guards".into()),
                        "stored guard does not match the automaton".to_string(),
                    );
                }
                if let Some(truths) = doc.constraint_truths.get(t) {
                    match guard.eval(|a| truths.get(a).copied()) {
                        Ok(true) => {}
                        _ => report.push(
                            None,
                            None,
                            Some(t as u64),
                            Some("constraint_truths".into()),
                            "episode pattern does not satisfy its transition guard".to_string(),
                        ),
                    }
                }
            }
        }
    }

    // The episode truth trace must satisfy the formula.
    if doc.constraint_truths.len() == episodes as usize {
        let steps: Vec<Valuation> = doc
            .constraint_truths
            .iter()
            .map(|m| m.clone().into_iter().collect())
            .collect();
        match Trace::new(steps).map(|tr| eval_trace(spec.formula(), &tr)) {
            Ok(Ok(true)) => {}
            _ => report.push(
                None,
                None,
                None,
                Some("constraint_truths".into()),
                "episode trace does not satisfy the temporal specification".to_string(),
            ),
        }
    } else {
        report.push(
            None,
            None,
            None,
            Some("constraint_truths".into()),
            format!(
                "expected {} episode patterns, found {}",
                episodes,
                doc.constraint_truths.len()
            ),
        );
    }

    // Per-episode sample files.
    let split_counts = spec.counts.episode_split_counts();
    let vars: Vec<&String> = system.variables().keys().collect();
    for t in 0..episodes {
        report.episodes_checked += 1;
        for (split, &expected) in &split_counts {
            let path = dir.join(super::episode_dir(t)).join(format!("{split}.csv"));
            let table = read_csv(&path)?;
            if table.rows.len() as u64 != expected {
                report.push(
                    Some(split),
                    None,
                    Some(t as u64),
                    None,
                    format!("expected {expected} samples, found {}", table.rows.len()),
                );
            }
            let label_cols: Vec<(String, usize)> = if vars.len() == 1 {
                match table.col("label") {
                    Some(c) => vec![(vars[0].clone(), c)],
                    None => {
                        report.push(
                            Some(split),
                            None,
                            Some(t as u64),
                            Some("label".into()),
                            "missing column".to_string(),
                        );
                        continue;
                    }
                }
            } else {
                vars.iter()
                    .filter_map(|v| table.col(&format!("lbl_{v}")).map(|c| ((*v).clone(), c)))
                    .collect()
            };
            for (i, row) in table.rows.iter().enumerate() {
                let mut a = Assignment::new();
                let mut ok = true;
                for (var, col) in &label_cols {
                    let def = spec.domain_of_var(var).expect("variable has a domain");
                    match def.value_of(&row[*col], universe) {
                        Some(v) => {
                            a.insert(var.clone(), v);
                        }
                        None => {
                            report.push(
                                Some(split),
                                Some(i as u64),
                                Some(t as u64),
                                Some(format!("lbl_{var}")),
                                format!("label `{}` not in domain", row[*col]),
                            );
                            ok = false;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                // Every sample realizes the episode pattern exactly.
                if let Some(truths) = doc.constraint_truths.get(t as usize) {
                    for (atom, expect) in truths {
                        let got = system.eval_constraint(atom, &a)?;
                        if got != *expect {
                            report.push(
                                Some(split),
                                Some(i as u64),
                                Some(t as u64),
                                Some(format!("c_{atom}")),
                                format!(
                                    "sample gives {} but the episode pattern requires {}",
                                    bit(got),
                                    bit(*expect)
                                ),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize)]
pub struct SplitStats {
    pub sequences: u64,
    pub positives: u64,
    pub negatives: u64,
    pub length_histogram: BTreeMap<u64, u64>,
    pub constraint_truth_rate: BTreeMap<String, f64>,
    pub constraint_relevance_rate: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Serialize)]
pub struct EpisodeStats {
    pub index: u32,
    pub samples: u64,
    pub constraint_positive_rate: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Serialize)]
pub struct StatsReport {
    pub mode: String,
    pub splits: BTreeMap<String, SplitStats>,
    pub episodes: Vec<EpisodeStats>,
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode: {}", self.mode)?;
        for (split, s) in &self.splits {
            writeln!(
                f,
                "split {split}: {} sequences ({} positive / {} negative)",
                s.sequences, s.positives, s.negatives
            )?;
            if !s.length_histogram.is_empty() {
                let parts: Vec<String> = s
                    .length_histogram
                    .iter()
                    .map(|(len, n)| format!("{len}:{n}"))
                    .collect();
                writeln!(f, "  lengths: {}", parts.join(" "))?;
            }
            for (name, rate) in &s.constraint_truth_rate {
                writeln!(
                    f,
                    "  {name}: true {:.3}, relevant {:.3}",
                    rate, s.constraint_relevance_rate[name]
                )?;
            }
        }
        for e in &self.episodes {
            let parts: Vec<String> = e
                .constraint_positive_rate
                .iter()
                .map(|(name, rate)| format!("{name}={rate:.3}"))
                .collect();
            writeln!(
                f,
                "episode {:02}: {} samples, {}",
                e.index,
                e.samples,
                parts.join(" ")
            )?;
        }
        Ok(())
    }
}

/// Descriptive statistics of an emitted dataset: per-constraint truth
/// frequencies, length histogram, and label balance (sequential) or
/// per-episode constraint marginals (incremental).
pub fn stats(dir: &Path) -> Result<StatsReport, DataError> {
    let (spec, _) = load_artifacts(dir)?;
    let system = spec.system();
    let mut report = StatsReport {
        mode: match spec.mode {
            Mode::Sequential => "sequential".into(),
            Mode::Incremental => "incremental".into(),
        },
        ..Default::default()
    };
    match spec.mode {
        Mode::Sequential => {
            for split in split_names(&spec) {
                let table = read_csv(&dir.join(format!("{split}.csv")))?;
                let mut s = SplitStats::default();
                let c_seq = table.col("seq_id").unwrap_or(0);
                let c_label = table.col("seq_label").unwrap_or(0);
                let mut seen: BTreeMap<u64, (bool, u64)> = BTreeMap::new();
                for row in &table.rows {
                    let id: u64 = row[c_seq].parse().unwrap_or(0);
                    let label = row[c_label] == "1";
                    let entry = seen.entry(id).or_insert((label, 0));
                    entry.1 += 1;
                }
                s.sequences = seen.len() as u64;
                for (label, len) in seen.values() {
                    if *label {
                        s.positives += 1;
                    } else {
                        s.negatives += 1;
                    }
                    *s.length_histogram.entry(*len).or_default() += 1;
                }
                let steps = table.rows.len() as f64;
                for name in system.constraints().keys() {
                    if let Some(col) = table.col(&format!("c_{name}")) {
                        let t = table.rows.iter().filter(|r| r[col] == "1").count();
                        s.constraint_truth_rate
                            .insert(name.clone(), t as f64 / steps);
                    }
                    if let Some(col) = table.col(&format!("rel_{name}")) {
                        let t = table.rows.iter().filter(|r| r[col] == "1").count();
                        s.constraint_relevance_rate
                            .insert(name.clone(), t as f64 / steps);
                    }
                }
                report.splits.insert(split, s);
            }
        }
        Mode::Incremental => {
            let LengthSpec::Episodes(episodes) = spec.length else {
                return Ok(report);
            };
            let vars: Vec<&String> = system.variables().keys().collect();
            for t in 0..episodes {
                let mut stats = EpisodeStats {
                    index: t,
                    ..Default::default()
                };
                let mut positive: BTreeMap<String, u64> = BTreeMap::new();
                for split in split_names(&spec) {
                    let path = dir.join(super::episode_dir(t)).join(format!("{split}.csv"));
                    let table = read_csv(&path)?;
                    let label_cols: Vec<(String, usize)> = if vars.len() == 1 {
                        table
                            .col("label")
                            .map(|c| vec![(vars[0].clone(), c)])
                            .unwrap_or_default()
                    } else {
                        vars.iter()
                            .filter_map(|v| {
                                table.col(&format!("lbl_{v}")).map(|c| ((*v).clone(), c))
                            })
                            .collect()
                    };
                    for row in &table.rows {
                        stats.samples += 1;
                        let mut a = Assignment::new();
                        for (var, col) in &label_cols {
                            if let Some(def) = spec.domain_of_var(var) {
                                if let Some(v) = def.value_of(&row[*col], system.universe()) {
                                    a.insert(var.clone(), v);
                                }
                            }
                        }
                        for name in system.constraints().keys() {
                            if let Ok(truth) = system.eval_constraint(name, &a) {
                                if truth {
                                    *positive.entry(name.clone()).or_default() += 1;
                                }
                            }
                        }
                    }
                }
                for name in system.constraints().keys() {
                    let pos = positive.get(name).copied().unwrap_or(0);
                    stats
                        .constraint_positive_rate
                        .insert(name.clone(), pos as f64 / stats.samples.max(1) as f64);
                }
                report.episodes.push(stats);
            }
        }
    }
    Ok(report)
}
