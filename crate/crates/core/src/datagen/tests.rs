use super::*;
use crate::csp::SolutionCache;
use crate::sampler::{sample_sequential_dataset, PoolFeasibility};
use crate::spec::{bundled_spec_text, load_spec};

fn tiny_sequential_spec() -> TaskSpec {
    // Small counts so binding/emission tests stay fast.
    let text = bundled_spec_text("task6_short")
        .unwrap()
        .replace("\"train\": 320", "\"train\": 12")
        .replace("\"val\": 40", "\"val\": 4")
        .replace("\"test\": 40", "\"test\": 4");
    load_spec(&text).unwrap()
}

fn generate_tiny(dir: &Path) -> RunManifest {
    generate(&tiny_sequential_spec(), dir, None).unwrap()
}

#[test]
fn symbolic_steps_bind_to_matching_manifest_labels() {
    // Manifests with distinct refs per label; every bound ref must carry the
    // step's label.
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut manifest = String::from("label,image\n");
    for label in 0..10 {
        for j in 0..3 {
            manifest.push_str(&format!("{label},img_{label}_{j}.png\n"));
        }
    }
    for name in ["digits_train.csv", "digits_test.csv"] {
        std::fs::write(root.join(name), &manifest).unwrap();
    }
    let text = bundled_spec_text("task6_short")
        .unwrap()
        .replace("\"train\": 320", "\"train\": 6")
        .replace("\"val\": 40", "\"val\": 2")
        .replace("\"test\": 40", "\"test\": 2")
        .replace(
            r#""labels": {
        "range": [
          0,
          9
        ]
      }"#,
            r#""labels": {"range": [0, 9]},
      "sources": {"train": "digits_train.csv", "val": "digits_train.csv", "test": "digits_test.csv"}"#,
        );
    let spec = load_spec(&text).unwrap();
    let sfa = spec.compile().unwrap();
    let cache = SolutionCache::new();
    let feas = PoolFeasibility {
        system: spec.system(),
        cache: &cache,
    };
    let walks = sample_sequential_dataset(&spec, &sfa, &feas).unwrap();
    let binding = DomainBinding::from_manifests(&spec, root).unwrap();
    let records = bind_walks(&spec, &walks, &binding, &cache).unwrap();
    for split_records in records.values() {
        for record in split_records {
            for step in &record.steps {
                for cell in step.vars.values() {
                    assert!(cell.image.starts_with(&format!("img_{}_", cell.label)));
                }
            }
        }
    }
}

#[test]
fn split_hygiene_distinguishes_disjoint_and_overlapping_manifests() {
    let build = |root: &Path, overlap: bool| {
        let mut train = String::from("label,image\n");
        let mut test = String::from("label,image\n");
        for label in 0..10 {
            for j in 0..3 {
                train.push_str(&format!("{label},tr_{label}_{j}.png\n"));
                let prefix = if overlap && j == 0 { "tr" } else { "te" };
                test.push_str(&format!("{label},{prefix}_{label}_{j}.png\n"));
            }
        }
        std::fs::write(root.join("digits_train.csv"), train).unwrap();
        std::fs::write(root.join("digits_test.csv"), test).unwrap();
        let text = bundled_spec_text("task6_short")
            .unwrap()
            .replace("\"train\": 320", "\"train\": 8")
            .replace("\"val\": 40", "\"val\": 2")
            .replace("\"test\": 40", "\"test\": 2")
            .replace(
                r#""labels": {
        "range": [
          0,
          9
        ]
      }"#,
                r#""labels": {"range": [0, 9]},
      "sources": {"train": "digits_train.csv", "val": "digits_train.csv", "test": "digits_test.csv"}"#,
            );
        load_spec(&text).unwrap()
    };
    // Disjoint manifests generate and validate clean.
    let tmp = tempfile::tempdir().unwrap();
    let spec = build(tmp.path(), false);
    let out = tmp.path().join("out");
    generate(&spec, &out, Some(tmp.path())).unwrap();
    assert!(validate(&out).unwrap().is_clean());
    // Shared references between train and test manifests are flagged, which
    // makes generation itself fail its internal validation gate.
    let tmp2 = tempfile::tempdir().unwrap();
    let spec2 = build(tmp2.path(), true);
    let err = generate(&spec2, &tmp2.path().join("out"), Some(tmp2.path())).unwrap_err();
    assert!(matches!(err, DataError::ValidationFailed(_)), "{err}");
}

#[test]
fn synthetic_domains_bind_to_placeholder_refs() {
    let spec = tiny_sequential_spec();
    let sfa = spec.compile().unwrap();
    let cache = SolutionCache::new();
    let feas = PoolFeasibility {
        system: spec.system(),
        cache: &cache,
    };
    let walks = sample_sequential_dataset(&spec, &sfa, &feas).unwrap();
    let records = bind_walks(&spec, &walks, &DomainBinding::synthetic(), &cache).unwrap();
    assert!(records["train"].iter().all(|r| r
        .steps
        .iter()
        .all(|s| s.vars.values().all(|c| c.image == SYNTHETIC_REF))));
    // Per-step truths match the labels by construction.
    let system = spec.system();
    for record in &records["train"] {
        for step in &record.steps {
            let a: crate::csp::Assignment = step
                .vars
                .iter()
                .map(|(v, cell)| (v.clone(), cell.label.parse::<i64>().unwrap()))
                .collect();
            for (name, cell) in &step.constraints {
                assert_eq!(system.eval_constraint(name, &a).unwrap(), cell.truth);
            }
        }
    }
}

#[test]
fn rebinding_with_the_same_seed_is_identical() {
    let spec = tiny_sequential_spec();
    let sfa = spec.compile().unwrap();
    let cache = SolutionCache::new();
    let feas = PoolFeasibility {
        system: spec.system(),
        cache: &cache,
    };
    let walks = sample_sequential_dataset(&spec, &sfa, &feas).unwrap();
    let a = bind_walks(&spec, &walks, &DomainBinding::synthetic(), &cache).unwrap();
    let b = bind_walks(&spec, &walks, &DomainBinding::synthetic(), &cache).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sequential_emit_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = generate_tiny(tmp.path());
    for file in [
        "train.csv",
        "val.csv",
        "test.csv",
        "automaton.json",
        "automaton.dot",
        "spec.json",
        "manifest.json",
    ] {
        assert!(tmp.path().join(file).exists(), "missing {file}");
    }
    assert!(manifest.files.contains_key("train.csv"));
    assert!(manifest.spec_digest.starts_with("sha256:"));
}

#[test]
fn re_emission_yields_identical_digests() {
    let t1 = tempfile::tempdir().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    let m1 = generate_tiny(t1.path());
    let m2 = generate_tiny(t2.path());
    assert_eq!(m1.files, m2.files);
}

#[test]
fn freshly_generated_dataset_validates_clean() {
    let tmp = tempfile::tempdir().unwrap();
    generate_tiny(tmp.path());
    let report = validate(tmp.path()).unwrap();
    assert!(report.is_clean(), "{report}");
    assert_eq!(report.sequences_checked, 20);
}

#[test]
fn flipping_one_truth_cell_is_one_localized_violation() {
    let tmp = tempfile::tempdir().unwrap();
    generate_tiny(tmp.path());
    let path = tmp.path().join("train.csv");
    let table = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = table.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "c_p").unwrap();
    // Flip the truth cell of train sequence 0, step 2.
    let mut cells: Vec<String> = lines[3].split(',').map(|s| s.to_string()).collect();
    cells[col] = if cells[col] == "1" { "0".into() } else { "1".into() };
    let flipped = cells.join(",");
    lines[3] = &flipped;
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let report = validate(tmp.path()).unwrap();
    assert_eq!(report.violations.len(), 1, "{report}");
    let v = &report.violations[0];
    assert_eq!(v.split.as_deref(), Some("train"));
    assert_eq!(v.sequence, Some(0));
    assert_eq!(v.step, Some(2));
    assert_eq!(v.column.as_deref(), Some("c_p"));
}

fn tiny_incremental_spec(name: &str) -> TaskSpec {
    let text = bundled_spec_text(name)
        .unwrap()
        .replace("\"per_episode\": 1000", "\"per_episode\": 40");
    load_spec(&text).unwrap()
}

#[test]
fn incremental_emit_writes_episode_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_incremental_spec("ccl_task1_mnist");
    generate(&spec, tmp.path(), None).unwrap();
    for t in 0..10 {
        for split in ["train", "val", "test"] {
            assert!(tmp
                .path()
                .join(format!("episode_{t:02}"))
                .join(format!("{split}.csv"))
                .exists());
        }
    }
    assert!(tmp.path().join("curriculum.json").exists());
    let report = validate(tmp.path()).unwrap();
    assert!(report.is_clean(), "{report}");
    assert_eq!(report.episodes_checked, 10);
}

#[test]
fn ccl_task1_zero_episode_is_pure_and_orphans_are_scheduled() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_incremental_spec("ccl_task1_mnist");
    generate(&spec, tmp.path(), None).unwrap();
    let doc: CurriculumDoc =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("curriculum.json")).unwrap())
            .unwrap();
    let zero_episodes: Vec<usize> = doc
        .constraint_truths
        .iter()
        .enumerate()
        .filter(|(_, m)| m["zero"])
        .map(|(t, _)| t)
        .collect();
    assert_eq!(zero_episodes.len(), 1);
    // Ratio 1.0 and the zero pattern: all samples in that episode are 0.
    let t = zero_episodes[0];
    for split in ["train", "val", "test"] {
        let text = std::fs::read_to_string(
            tmp.path()
                .join(format!("episode_{t:02}"))
                .join(format!("{split}.csv")),
        )
        .unwrap();
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(2).unwrap(), "0");
        }
    }
    assert!(doc.orphan_schedule.contains_key("even"));
    assert!(doc.orphan_schedule.contains_key("odd"));
    // Orphan episodes at ratio 1.0 are all-positive.
    let even_t = doc.orphan_schedule["even"];
    let text = std::fs::read_to_string(
        tmp.path()
            .join(episode_dir(even_t))
            .join("train.csv"),
    )
    .unwrap();
    for line in text.lines().skip(1) {
        let label: i64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!([2, 4, 6, 8].contains(&label), "label {label}");
    }
}

#[test]
fn ccl_task2_orphan_ratio_is_binomial_around_half() {
    let tmp = tempfile::tempdir().unwrap();
    let text = bundled_spec_text("ccl_task2_mnist")
        .unwrap()
        .replace("\"per_episode\": 1000", "\"per_episode\": 600");
    let spec = load_spec(&text).unwrap();
    generate(&spec, tmp.path(), None).unwrap();
    let doc: CurriculumDoc =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("curriculum.json")).unwrap())
            .unwrap();
    for (orphan, t) in &doc.orphan_schedule {
        let wanted: Vec<i64> = match orphan.as_str() {
            "r" => vec![6, 7, 8],
            "s" => vec![9],
            other => panic!("unexpected orphan {other}"),
        };
        let mut positive = 0usize;
        let mut total = 0usize;
        for split in ["train", "val", "test"] {
            let text = std::fs::read_to_string(
                tmp.path().join(episode_dir(*t)).join(format!("{split}.csv")),
            )
            .unwrap();
            for line in text.lines().skip(1) {
                let label: i64 = line.split(',').nth(2).unwrap().parse().unwrap();
                total += 1;
                if wanted.contains(&label) {
                    positive += 1;
                }
            }
        }
        let fraction = positive as f64 / total as f64;
        // 600 Bernoulli(0.5) samples: five sigma is about 0.102.
        assert!(
            (fraction - 0.5).abs() < 0.11,
            "orphan {orphan}: fraction {fraction}"
        );
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let spec = tiny_sequential_spec();
    let run = |threads: usize| {
        let tmp = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let manifest = pool.install(|| generate(&spec, tmp.path(), None).unwrap());
        manifest.files
    };
    assert_eq!(run(1), run(4));
}
