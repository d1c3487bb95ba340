//! Operator entry point: compile specifications to automata, generate and
//! validate datasets, inspect statistics, and evaluate the probabilistic
//! semantics of constraints and transitions.
//!
//! Exit codes: 0 success, 1 validation failure, 2 parse/compile error,
//! 3 infeasible generation target, 4 I/O error.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tracegen_core::csp::{ConstraintDef, Universe};
use tracegen_core::datagen::{self, DataError};
use tracegen_core::ltlf::parse_formula;
use tracegen_core::probeval::{
    constraint_prob_exact, constraint_prob_topk, guard_prob_factored, guard_prob_joint,
    CategoricalDist, GuardAtomProbs,
};
use tracegen_core::sampler::SampleError;
use tracegen_core::sfa::{compile, Guard, Sfa};
use tracegen_core::spec::{load_spec, TaskSpec, BUNDLED_SPECS};

const PROBE_EXAMPLE: &str = include_str!("../fixtures/probe_example.json");

#[derive(Parser)]
#[command(name = "tracegen", version, about = "Relational-temporal benchmark dataset generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a formula or a spec file into a symbolic automaton.
    Compile(CompileArgs),
    /// Generate a dataset from a spec file and validate it.
    Generate(GenerateArgs),
    /// Re-derive every annotation of an emitted dataset and report mismatches.
    Validate {
        dir: PathBuf,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Descriptive statistics of an emitted dataset.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Exact / top-1 constraint probabilities and factored / joint transition
    /// probabilities from a JSON file of distributions.
    Probe {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// List or export the bundled task specifications.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
}

#[derive(Args)]
struct CompileArgs {
    /// Spec file whose formula is compiled.
    spec: Option<PathBuf>,
    /// Formula text, as an alternative to a spec file.
    #[arg(long, conflicts_with = "spec")]
    formula: Option<String>,
    /// Comma-separated atom names for --formula.
    #[arg(long, value_delimiter = ',')]
    atoms: Vec<String>,
    /// Write automaton.json and automaton.dot into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    spec: PathBuf,
    out_dir: PathBuf,
    /// Worker threads (default: all cores). Outputs are identical for any
    /// worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Replace the spec's seed for this run.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Base directory for manifest paths (domains with sources).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Emit the run manifest as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum TasksCommand {
    /// Names and modes of the bundled tasks.
    List,
    /// Write every bundled spec (plus the probe example) into a directory.
    Export { dir: PathBuf },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_IO: u8 = 4;

fn main() -> ExitCode {
    // Die quietly when a pipe reader (head, less) closes stdout early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(data) = cause.downcast_ref::<DataError>() {
            return match data {
                DataError::ValidationFailed(_) => EXIT_VALIDATION,
                DataError::Io { .. } => EXIT_IO,
                DataError::Malformed { .. } => EXIT_IO,
                DataError::MissingManifest { .. } | DataError::EmptyLabelPool { .. } => EXIT_IO,
                DataError::Sample(SampleError::Infeasible { .. }) => EXIT_INFEASIBLE,
                _ => EXIT_PARSE,
            };
        }
        if let Some(sample) = cause.downcast_ref::<SampleError>() {
            return match sample {
                SampleError::Infeasible { .. } => EXIT_INFEASIBLE,
                _ => EXIT_PARSE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_PARSE
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Compile(args) => cmd_compile(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Validate { dir, json } => cmd_validate(&dir, json),
        Command::Stats { dir, json } => cmd_stats(&dir, json),
        Command::Probe { file, json } => cmd_probe(&file, json),
        Command::Tasks { command } => cmd_tasks(command),
    }
}

fn cmd_compile(args: CompileArgs) -> anyhow::Result<ExitCode> {
    let sfa: Sfa = match (&args.spec, &args.formula) {
        (Some(path), None) => {
            let spec = load_spec(&read_file(path)?)?;
            spec.compile()?
        }
        (None, Some(text)) => {
            let known: BTreeSet<String> = args.atoms.iter().cloned().collect();
            let formula = parse_formula(text, &known)?;
            compile(&formula)?
        }
        _ => anyhow::bail!("provide either a spec file or --formula with --atoms"),
    };
    println!("states: {}", sfa.state_count());
    println!("accepting: {}", sfa.accepting().len());
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("automaton.json"), sfa.to_json())?;
        std::fs::write(out.join("automaton.dot"), sfa.to_dot())?;
        println!("wrote {}", out.join("automaton.json").display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_spec_arg(path: &Path, seed_override: Option<u64>) -> anyhow::Result<TaskSpec> {
    let mut spec = load_spec(&read_file(path)?)?;
    if let Some(seed) = seed_override {
        spec = spec.with_seed(seed);
    }
    Ok(spec)
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<ExitCode> {
    let spec = load_spec_arg(&args.spec, args.seed_override)?;
    let cache_cap = std::env::var("TRACEGEN_CACHE_MAX_SOLUTIONS")
        .ok()
        .and_then(|v| v.parse::<u64>().ok());
    let data_root = args
        .data_root
        .clone()
        .or_else(|| args.spec.parent().map(Path::to_path_buf));
    let run = || {
        datagen::generate_with_cache_cap(
            &spec,
            &args.out_dir,
            data_root.as_deref(),
            cache_cap,
        )
    };
    let manifest = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(run),
        None => run(),
    }?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
    } else {
        println!("generated `{}` into {}", spec.name, args.out_dir.display());
        println!("seed: {}", manifest.seed);
        println!("files: {}", manifest.files.len());
        println!(
            "cache: {} pools, {} solutions, {} hits / {} misses",
            manifest.cache.pools,
            manifest.cache.solutions,
            manifest.cache.hits,
            manifest.cache.misses
        );
        println!("wall clock: {} ms", manifest.wall_clock_ms);
        println!("validation: clean");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(dir: &Path, json: bool) -> anyhow::Result<ExitCode> {
    let report = datagen::validate(dir)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    })
}

fn cmd_stats(dir: &Path, json: bool) -> anyhow::Result<ExitCode> {
    let report = datagen::stats(dir)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ProbeDoc {
    domains: BTreeMap<String, ProbeDomain>,
    constraints: BTreeMap<String, ProbeConstraint>,
    dists: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    guards: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProbeDomain {
    Range { range: [i64; 2] },
    Labels { labels: Vec<String> },
}

#[derive(Deserialize)]
struct ProbeConstraint {
    params: Vec<String>,
    body: String,
}

fn cmd_probe(file: &Path, json: bool) -> anyhow::Result<ExitCode> {
    let doc: ProbeDoc = serde_json::from_str(&read_file(file)?)?;
    let universe = Universe::new(doc.domains.values().flat_map(|d| match d {
        ProbeDomain::Labels { labels } => labels.clone(),
        ProbeDomain::Range { .. } => Vec::new(),
    }));
    let values: BTreeMap<String, Vec<i64>> = doc
        .domains
        .iter()
        .map(|(name, d)| {
            let vals = match d {
                ProbeDomain::Range { range: [lo, hi] } => (*lo..=*hi).collect(),
                ProbeDomain::Labels { labels } => labels
                    .iter()
                    .map(|l| universe.index_of(l).expect("label in universe"))
                    .collect(),
            };
            (name.clone(), vals)
        })
        .collect();

    let mut constraints: BTreeMap<String, ConstraintDef> = BTreeMap::new();
    for (name, c) in &doc.constraints {
        constraints.insert(
            name.clone(),
            ConstraintDef::parse(name.clone(), c.params.clone(), &c.body, &universe)?,
        );
    }
    let mut dists: BTreeMap<String, CategoricalDist> = BTreeMap::new();
    for (var, probs) in &doc.dists {
        let vals = values
            .get(var)
            .ok_or_else(|| anyhow::anyhow!("distribution for undeclared domain `{var}`"))?;
        dists.insert(
            var.clone(),
            CategoricalDist::new(var, vals.clone(), probs.clone())?,
        );
    }

    let mut exact = BTreeMap::new();
    let mut top1 = BTreeMap::new();
    for (name, c) in &constraints {
        exact.insert(name.clone(), constraint_prob_exact(c, &dists)?);
        top1.insert(name.clone(), constraint_prob_topk(c, &dists, 1)?);
    }
    let exact_probs = GuardAtomProbs::new(exact.clone())?;
    let top1_probs = GuardAtomProbs::new(top1.clone())?;

    let known: BTreeSet<String> = constraints.keys().cloned().collect();
    let mut guard_rows = Vec::new();
    for text in &doc.guards {
        let guard = Guard::parse(text, &known)?;
        guard_rows.push(serde_json::json!({
            "guard": text,
            "factored_top1": guard_prob_factored(&guard, &top1_probs)?,
            "factored_exact": guard_prob_factored(&guard, &exact_probs)?,
            "joint_exact": guard_prob_joint(&guard, &constraints, &dists)?,
        }));
    }

    if json {
        let out = serde_json::json!({
            "constraints": constraints.keys().map(|name| serde_json::json!({
                "constraint": name,
                "exact": exact[name],
                "top1": top1[name],
            })).collect::<Vec<_>>(),
            "guards": guard_rows,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(ExitCode::SUCCESS);
    }

    println!("{:<12} {:>10} {:>10}", "constraint", "exact", "top1");
    for name in constraints.keys() {
        println!("{:<12} {:>10} {:>10}", name, trim(exact[name]), trim(top1[name]));
    }
    if !guard_rows.is_empty() {
        println!();
        println!(
            "{:<16} {:>15} {:>15} {:>12}",
            "guard", "factored(top1)", "factored(exact)", "joint(exact)"
        );
        for row in &guard_rows {
            println!(
                "{:<16} {:>15} {:>15} {:>12}",
                row["guard"].as_str().unwrap(),
                trim(row["factored_top1"].as_f64().unwrap()),
                trim(row["factored_exact"].as_f64().unwrap()),
                trim(row["joint_exact"].as_f64().unwrap()),
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

// Up to 10 significant digits with trailing zeros removed, so table values
// read like the quantities they approximate (0.41, 0.0255, ...).
fn trim(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn cmd_tasks(command: TasksCommand) -> anyhow::Result<ExitCode> {
    match command {
        TasksCommand::List => {
            for (name, text) in BUNDLED_SPECS {
                let spec = load_spec(text)?;
                let mode = match spec.mode {
                    tracegen_core::spec::Mode::Sequential => "sequential",
                    tracegen_core::spec::Mode::Incremental => "incremental",
                };
                println!("{name:<22} {mode:<12} seed={}", spec.seed);
            }
        }
        TasksCommand::Export { dir } => {
            std::fs::create_dir_all(&dir)?;
            for (name, text) in BUNDLED_SPECS {
                std::fs::write(dir.join(format!("{name}.spec")), text)?;
            }
            std::fs::write(dir.join("probe_example.json"), PROBE_EXAMPLE)?;
            println!(
                "wrote {} specs and probe_example.json into {}",
                BUNDLED_SPECS.len(),
                dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
