#!/usr/bin/env python3
"""End-to-end smoke test of the Python bindings.

Build the extension first:

    cargo build -p tracegen-py --release     # or --debug

The script copies the built cdylib next to itself as `tracegen.so`,
imports it, and exercises the main surface: formula evaluation, automaton
compilation and equivalence, constraint solving, the probabilistic
evaluators, and a small generate/validate round trip.
"""

import json
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_tracegen():
    here = pathlib.Path(__file__).resolve().parent
    target = here / "tracegen.so"
    candidates = [
        ROOT / "target" / "release" / "libtracegen.so",
        ROOT / "target" / "debug" / "libtracegen.so",
    ]
    built = [c for c in candidates if c.exists()]
    if not built:
        sys.exit("build the extension first: cargo build -p tracegen-py --release")
    newest = max(built, key=lambda c: c.stat().st_mtime)
    shutil.copyfile(newest, target)
    sys.path.insert(0, str(here))
    import tracegen

    return tracegen


def approx(got, want, tol=1e-9):
    assert abs(got - want) < tol, f"got {got}, want {want}"


def main():
    tg = import_tracegen()
    print(f"tracegen {tg.__version__}")

    # Formulas and automata.
    formula = tg.parse_formula("F r & ((p <-> X q) U r)", ["p", "q", "r"])
    assert formula.atoms() == ["p", "q", "r"]
    assert formula.evaluate([{"p": False, "q": False, "r": True}])
    automaton = formula.compile()
    assert automaton.states == 5, automaton.states
    assert len(automaton.accepting) == 1
    assert automaton.check_equiv(formula, 4)
    run_states, accepted = automaton.run([{"p": True, "q": True, "r": False}])
    assert len(run_states) == 2 and not accepted
    assert json.loads(automaton.to_json())["states"] == 5
    print("formula + automaton: ok")

    # Bundled tasks and constraint solving.
    names = tg.bundled_names()
    assert len(names) == 16, names
    task3 = tg.load_spec(tg.bundled_spec_text("task3_short"))
    assert task3.mode == "sequential"
    assert task3.eval_constraint("q", {"X": 3, "Y": 2, "Z": 2})
    assert not task3.eval_constraint("p", {"X": 3, "Y": 3, "Z": 8})
    both = task3.solutions("p & q")
    assert all(
        len({s["X"], s["Y"], s["Z"]}) == 3
        and int(s["X"]) < int(s["Y"]) + int(s["Z"])
        for s in both
    )
    print(f"task3 solutions(p & q): {len(both)} assignments")

    # Probabilistic evaluation reproduces the worked numbers.
    probe = json.loads((ROOT / "crates/cli/fixtures/probe_example.json").read_text())
    spec_doc = {
        "name": "probe",
        "mode": "sequential",
        "seed": 1,
        "domains": [
            {"name": "digitA", "labels": {"range": [0, 9]}},
            {"name": "digitB", "labels": {"range": [0, 9]}},
            {"name": "cifar10", "labels": probe["domains"]["C"]["labels"]},
        ],
        "variables": {"A": "digitA", "B": "digitB", "C": "cifar10"},
        "constraints": probe["constraints"],
        "formula": "F r & ((p <-> X q) U r)",
        "length": {"min": 1, "max": 5},
        "counts": {"train": 1},
    }
    spec = tg.load_spec(json.dumps(spec_doc))
    dists = probe["dists"]
    approx(tg.constraint_prob_exact(spec, "p", dists), 0.41)
    approx(tg.constraint_prob_exact(spec, "q", dists), 0.97)
    approx(tg.constraint_prob_exact(spec, "r", dists), 0.85)
    approx(tg.constraint_prob_topk(spec, "p", dists, 1), 0.32)
    exact = {"p": 0.41, "q": 0.97, "r": 0.85}
    top1 = {"p": 0.32, "q": 0.4, "r": 0.8}
    approx(tg.guard_prob_factored("!q & r", top1), 0.48)
    approx(tg.guard_prob_factored("!q & r", exact), 0.0255)
    approx(tg.guard_prob_factored("!p & !q", top1), 0.408)
    approx(tg.guard_prob_factored("!p & !q", exact), 0.0177)
    approx(tg.guard_prob_joint(spec, "!p & !q", dists), 0.03)
    approx(tg.accept_prob(spec.compile(), [exact]), 0.85)
    print("probabilistic evaluation: ok")

    # Curriculum sampling.
    ccl = tg.load_spec(tg.bundled_spec_text("ccl_task1_mnist"))
    states, truths = tg.sample_curriculum(ccl)
    assert len(states) == 11 and len(truths) == 10
    assert sum(t["zero"] for t in truths) == 1
    print("curriculum sampling: ok")

    # Tiny generate/validate round trip.
    small = json.loads(tg.bundled_spec_text("task6_short"))
    small["counts"] = {"train": 8, "val": 2, "test": 2}
    spec = tg.load_spec(json.dumps(small))
    with tempfile.TemporaryDirectory() as tmp:
        manifest = tg.generate(spec, tmp, workers=2)
        assert manifest["seed"] == spec.seed
        report = tg.validate(tmp)
        assert report["violations"] == [], report
        stats = tg.stats(tmp)
        assert stats["splits"]["train"]["sequences"] == 8
    print("generate/validate/stats: ok")

    print("smoke test passed")


if __name__ == "__main__":
    main()
