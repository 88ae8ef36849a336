"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line before asserting.
The synthetic-corpus criteria (1, 2, 8, 9, 10) share one module-scoped run
with the default hyperparameters; the whole module takes several minutes.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import ev
from sigl import autoencoder as ae
from sigl import synth
from sigl.audit import RELATION_OBJECT_KIND, EntityKind, Relation
from sigl.featurize import generate_walks, solve_alacarte
from sigl.graph import SIG, Edge, EdgeType, NodeRef, backtrack, build_dependency_graph, is_acyclic
from sigl.jenks import jenks_all
from sigl.pipeline import Bundle, LabeledTrace, PipelineConfig, evaluate, train_bundle
from test_autoencoder import diamond, embed, oracle_encode, random_model, random_small_graph
from test_detector import brute_force, exact_sdcm
from test_graph import _oracle_backtrack

TEMPLATES = list(synth.TEMPLATES)
PROFILES = list(synth.PROFILES)
# 40 benign traces feed training and validation; the 10 holdouts are separate
CONFIG = PipelineConfig(train_ratio=0.8, validation_ratio=0.2, test_ratio=0.0)
TRAIN_SEEDS = range(0, 40)
HOLDOUT_SEEDS = range(40, 50)
MALICIOUS_SEEDS = range(1000, 1020)
CONTAMINANT_SEEDS = range(2000, 2004)
RUNTIME_BUDGET = 30 * 60


def verdict(n, ok, detail):
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {n}: {detail}"


def labeled(trace, name):
    return LabeledTrace(name, trace.events, trace.sidecar())


def malicious(template, seed, i):
    mode = "bundle" if i % 2 == 0 else "embed"
    profile = PROFILES[i % len(PROFILES)]
    return labeled(synth.gen_malicious_trace(template, seed, mode, profile),
                   f"{template.name}-{mode}-{profile}-{seed}")


def training_set(template):
    return [labeled(synth.gen_benign_trace(template, s), f"{template.name}-benign-{s}")
            for s in TRAIN_SEEDS]


def evaluation_set(template):
    holdout = [labeled(synth.gen_benign_trace(template, s), f"{template.name}-benign-{s}")
               for s in HOLDOUT_SEEDS]
    return holdout + [malicious(template, s, i) for i, s in enumerate(MALICIOUS_SEEDS)]


def full_run(name, train=None):
    template = synth.TEMPLATES[name]
    bundle = train_bundle(train or training_set(template), CONFIG)
    return bundle, evaluate(bundle, evaluation_set(template))


@pytest.fixture(scope="module")
def corpus_runs():
    start = time.perf_counter()
    runs = {name: full_run(name) for name in TEMPLATES}
    return runs, time.perf_counter() - start


def scores(result, want_malicious):
    return [r.score for t, r, _ in result.reports if t.malicious == want_malicious]


# -- criterion 1 ---------------------------------------------------------------

def test_criterion_1_end_to_end_detection(corpus_runs):
    runs, elapsed = corpus_runs
    aucs = {name: res.metrics["auc"] for name, (_, res) in runs.items()}
    tp = sum(res.metrics["tp"] for _, res in runs.values())
    fn = sum(res.metrics["fn"] for _, res in runs.values())
    fp = sum(res.metrics["fp"] for _, res in runs.values())
    tn = sum(res.metrics["tn"] for _, res in runs.values())
    recall, fpr = tp / (tp + fn), fp / (fp + tn)
    ok = (all(a >= 0.95 for a in aucs.values()) and recall >= 0.9 and fpr <= 0.1
          and elapsed <= RUNTIME_BUDGET)
    auc_text = ", ".join(f"{k} {v:.3f}" for k, v in aucs.items())
    verdict(1, ok, f"AUC {auc_text}; recall {recall:.3f}; FPR {fpr:.3f}; {elapsed:.0f} s")


# -- criterion 2 ---------------------------------------------------------------

def test_criterion_2_guidance(corpus_runs):
    runs, _ = corpus_runs
    tiers = [g for _, res in runs.values() for g in res.metrics["guidance_per_graph"]
             if g is not None]
    targeted = sum(g == "targeted" for g in tiers)
    frac = targeted / len(tiers) if tiers else 0.0
    verdict(2, frac >= 0.8, f"{targeted}/{len(tiers)} detected traces with targeted guidance")


# -- criterion 3 ---------------------------------------------------------------

def test_criterion_3_jenks_exhaustive_equivalence():
    rng = np.random.default_rng(3)
    cases = mismatches = 0
    for case in range(1000):
        n = int(rng.integers(1, 13))
        # half the cases use a narrow range so ties and repeated values occur
        hi = 40 if case % 2 else 8000
        values = list(rng.integers(-hi, hi + 1, size=n) / 8)
        distinct = len(set(values))
        for p in jenks_all(values, distinct):
            cases += 1
            mismatches += exact_sdcm(p.classes) != brute_force(values, p.k)
    verdict(3, mismatches == 0, f"{cases} (list, k) pairs, {mismatches} mismatches")


# -- criterion 4 ---------------------------------------------------------------

def test_criterion_4_gradient_check():
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        sig = random_small_graph(rng)
        errors.append(ae.grad_check(random_model(seed), sig, embed(sig, seed), eps=1e-5))
    worst = max(errors)
    verdict(4, worst <= 1e-4, f"max relative error {worst:.2e} over 10 fixtures")


# -- criterion 5 ---------------------------------------------------------------

def test_criterion_5_encoder_oracle():
    sig = diamond()
    model, emb = random_model(0), embed(sig, 0)
    got, want = ae.encode(model, sig, emb), oracle_encode(model, sig, emb)
    diff = max(float(np.abs(got[n][i] - want[n][i]).max()) for n in sig.nodes for i in (0, 1))
    verdict(5, diff <= 1e-10, f"max |h, c difference| {diff:.1e}")


# -- criterion 6 ---------------------------------------------------------------

SERVICE = "c:/windows/svchost.exe"


def random_events(rng):
    n = int(rng.integers(0, 41))
    services = {f"p{i}" for i in range(4) if rng.random() < 0.25}
    ts, out = 0, []
    relations = list(Relation)
    for _ in range(n):
        ts += int(rng.integers(0, 5))
        rel = relations[int(rng.integers(len(relations)))]
        kind = RELATION_OBJECT_KIND[rel]
        pool = {EntityKind.PROCESS: ("p", 4), EntityKind.FILE: ("f", 4),
                EntityKind.SOCKET: ("s", 2)}[kind]
        sub = f"p{int(rng.integers(4))}"
        obj = f"{pool[0]}{int(rng.integers(pool[1]))}"
        out.append(ev(ts, sub, rel, obj,
                      obj_name=SERVICE if obj in services else None,
                      sub_name=SERVICE if sub in services else None))
    return out, services


def test_criterion_6_builder_properties():
    rng = np.random.default_rng(6)
    cyclic = disagreements = backtracked = 0
    for _ in range(1000):
        events, services = random_events(rng)
        full = build_dependency_graph(events)
        cyclic += not is_acyclic(full)
        files = sorted({n.name for n in full.nodes if n.kind is EntityKind.FILE})
        if not files:
            continue
        bound_us = int(rng.integers(0, 13))
        target = files[int(rng.integers(len(files)))]
        got = backtrack(full, [target], time_bound=bound_us / 1e6)
        backtracked += 1
        want = _oracle_backtrack(full, {target}, bound_us, services)
        disagreements += set(got.nodes) != want or not is_acyclic(got)
    ok = cyclic == 0 and disagreements == 0
    verdict(6, ok, f"1000 sequences, {cyclic} cyclic; {backtracked} backtracks, "
                   f"{disagreements} oracle disagreements")


# -- criterion 7 ---------------------------------------------------------------

def test_criterion_7_embedding_properties():
    a, b, c = (NodeRef(k, 0, EntityKind.FILE, k) for k in "abc")
    sig = SIG(frozenset({a, b, c}), (Edge(a, b, EdgeType.WRITE, 0), Edge(a, c, EdgeType.WRITE, 0)))
    pvalues = []
    for seed in range(3):
        walks = [w for w in generate_walks(sig, walks_per_node=10_000, length=1, seed=seed)
                 if w.source == a]
        n_b = sum(w.walk[0] == b for w in walks)
        pvalues.append(chisquare([n_b, len(walks) - n_b]).pvalue)
    rng = np.random.default_rng(7)
    planted = rng.normal(size=(16, 16))
    u = rng.normal(size=(400, 16))
    err = float(np.linalg.norm(solve_alacarte(u @ planted.T, u, lam=1e-6) - planted))
    ok = min(pvalues) > 0.01 and err < 1e-3
    verdict(7, ok, f"chi-square p-values {', '.join(f'{p:.3f}' for p in pvalues)}; "
                   f"planted map error {err:.1e}")


# -- criterion 8 ---------------------------------------------------------------

def test_criterion_8_sensitivity_margin(corpus_runs):
    runs, _ = corpus_runs
    margins = {name: min(scores(res, True)) / max(scores(res, False))
               for name, (_, res) in runs.items()}
    separated = [name for name, m in margins.items() if m > 1.0]
    detail = ", ".join(f"{k} {v:.2f}x" for k, v in margins.items())
    verdict(8, len(separated) >= 4, f"{len(separated)}/5 separated; min malicious / "
                                    f"max benign: {detail}")


# -- criterion 9 ---------------------------------------------------------------

def test_criterion_9_contamination(corpus_runs):
    runs, _ = corpus_runs
    drops = {}
    for name in TEMPLATES:
        template = synth.TEMPLATES[name]
        train = training_set(template)
        # 10% of the training traces are malicious but carry benign labels
        for j, seed in enumerate(CONTAMINANT_SEEDS):
            bad = malicious(template, seed, j + 1)
            train[j * 10] = LabeledTrace(bad.name, bad.events, {"label": "benign"})
        _, res = full_run(name, train)
        drops[name] = runs[name][1].metrics["auc"] - res.metrics["auc"]
    detail = ", ".join(f"{k} {v:+.3f}" for k, v in drops.items())
    verdict(9, all(d <= 0.1 for d in drops.values()), f"AUC drop per template: {detail}")


# -- criterion 10 --------------------------------------------------------------

def bundle_bytes(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_criterion_10_determinism(corpus_runs, tmp_path):
    runs, _ = corpus_runs
    first_bundle, first_eval = runs["ziplite"]
    second_bundle, second_eval = full_run("ziplite")
    first_bundle.save(tmp_path / "one")
    second_bundle.save(tmp_path / "two")
    same_bundle = bundle_bytes(tmp_path / "one") == bundle_bytes(tmp_path / "two")
    reloaded = Bundle.load(tmp_path / "two")
    same_reports = [r.to_json() for _, r, _ in first_eval.reports] == \
                   [r.to_json() for _, r, _ in second_eval.reports] == \
                   [reloaded.score_graph(s, t.name).to_json() for t, _, s in first_eval.reports]
    verdict(10, same_bundle and same_reports,
            f"bundle files identical: {same_bundle}; {len(first_eval.reports)} reports "
            f"identical across runs and after reload: {same_reports}")
