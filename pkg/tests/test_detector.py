import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sigl.audit import EntityKind
from sigl.detect import (ABNORMAL, BENIGN, Threshold, TooFewGraphs, classify_and_rank,
                         compute_threshold, rank_processes)
from sigl.graph import NodeRef
from sigl.jenks import KTooLarge, jenks_all, jenks_breaks, max_zone_avg, select_k


def exact_sdcm(classes):
    total = Fraction(0)
    for cl in classes:
        fr = [Fraction(v) for v in cl]
        m = sum(fr) / len(fr)
        total += sum((v - m) ** 2 for v in fr)
    return total


def brute_force(values, k):
    """Minimum exact SDCM over every contiguous k-partition of the sorted values."""
    x = [Fraction(v) for v in sorted(values)]
    n = len(x)
    cost = {}
    for i in range(n):
        s = q = Fraction(0)
        for j in range(i, n):
            s += x[j]
            q += x[j] * x[j]
            cost[i, j + 1] = q - s * s / (j + 1 - i)
    best = None
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0, *cuts, n)
        total = sum(cost[bounds[i], bounds[i + 1]] for i in range(k))
        best = total if best is None or total < best else best
    return best


def gvf_oracle(values, k):
    sdam = exact_sdcm([values])
    return float(1 - brute_force(values, k) / sdam)


# -- jenks --------------------------------------------------------------------

def test_two_clusters():
    p = jenks_breaks([1, 2, 3, 10, 11, 12], 2)
    assert p.classes == [(1.0, 2.0, 3.0), (10.0, 11.0, 12.0)]
    assert p.gvf == pytest.approx(gvf_oracle([1, 2, 3, 10, 11, 12], 2), abs=1e-15)
    assert p.gvf >= 0.9


def test_k_one_and_k_distinct():
    vals = [4.0, 1.0, 7.5, 2.0]
    one = jenks_breaks(vals, 1)
    assert one.gvf == 0.0 and one.classes == [tuple(sorted(vals))]
    full = jenks_breaks(vals, 4)
    assert full.gvf == 1.0 and all(len(c) == 1 for c in full.classes)
    with pytest.raises(KTooLarge):
        jenks_breaks([1, 1, 2], 3)
    with pytest.raises(ValueError):
        jenks_breaks([], 1)


def test_select_k_examples():
    assert select_k([1, 2, 3, 10, 11, 12]) == 2
    assert select_k([5, 5, 5]) == 1
    # 1..100 first reaches GVF 0.9 at k=4, so the cap of 5 is not needed
    vals = list(range(1, 101))
    g = [gvf_oracle(vals, k) for k in (2, 3, 4)]
    assert g[0] < 0.9 and g[1] < 0.9 and g[2] >= 0.9
    assert select_k(vals) == 4


def test_gvf_of_1_to_100_frozen():
    # oracle values for the optimal partitions of 1..100
    parts = jenks_all(list(range(1, 101)), 5)
    assert [round(p.gvf, 4) for p in parts] == [0.0, 0.7501, 0.8889, 0.9376, 0.9601]


def test_select_k_cap_without_good_fit():
    rng = np.random.default_rng(0)
    vals = list(rng.random(200))
    assert select_k(vals, gvf_cutoff=0.999) == 5
    assert select_k(vals, gvf_cutoff=0.999, k_max=3) == 3


def test_max_zone_avg_examples():
    assert max_zone_avg([1, 2, 3, 10, 11, 12]) == 11.0
    assert max_zone_avg([4.2]) == 4.2
    assert max_zone_avg([5, 5, 5, 5]) == 5.0


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# eighths keep every sum exact in binary floating point
grid = st.integers(-8000, 8000).map(lambda i: i / 8)


@given(st.lists(grid, min_size=1, max_size=12))
def test_jenks_matches_exhaustive_oracle(values):
    distinct = len(set(values))
    for p in jenks_all(values, distinct):
        assert exact_sdcm(p.classes) == brute_force(values, p.k)


@given(st.lists(finite, min_size=1, max_size=30))
def test_partition_invariants(values):
    x = sorted(values)
    for p in jenks_all(values, min(5, len(set(values)))):
        assert all(p.classes) and [v for c in p.classes for v in c] == x
        assert 0.0 <= p.gvf <= 1.0 + 1e-12


@given(st.lists(finite, min_size=1, max_size=30))
def test_max_zone_avg_between_mean_and_max(values):
    m = max_zone_avg(values)
    assert np.mean(values) - 1e-9 <= m <= max(values) + 1e-9


# -- threshold ----------------------------------------------------------------

def test_threshold_examples():
    t = compute_threshold([[1.0], [3.0]])
    assert (t.mean, t.std, t.value) == (2.0, 1.0, 5.0)
    same = compute_threshold([[0.5, 0.2], [0.5, 0.2], [0.5, 0.2]])
    assert same.std == 0.0 and same.value == same.mean
    assert compute_threshold([[1.0], [3.0]], multiplier=1.0).value == 3.0
    assert t.with_multiplier(1.0).value == 3.0
    with pytest.raises(TooFewGraphs):
        compute_threshold([[1.0]])
    assert Threshold.from_dict(json.loads(json.dumps(t.to_dict()))) == t


@given(st.lists(st.lists(st.integers(0, 100).map(float), min_size=1, max_size=6),
                min_size=2, max_size=6),
       st.integers(-50, 50).map(float))
def test_threshold_translation_equivariant(graphs, c):
    base = compute_threshold(graphs)
    shifted = compute_threshold([[v + c for v in g] for g in graphs])
    assert shifted.value == pytest.approx(base.value + c, abs=1e-9)


# -- classification -------------------------------------------------------------

def procs(n):
    return [NodeRef(f"p{i}", 0, EntityKind.PROCESS, f"c:/p{i}.exe") for i in range(n)]


def thresh(value):
    return Threshold(value, value, 0.0, (value,))


def test_all_low_is_benign_with_ranking():
    ps = procs(4)
    r = classify_and_rank(dict(zip(ps, [0.1, 0.3, 0.2, 0.05])), thresh(10.0))
    assert r.verdict == BENIGN
    assert [p.node.base_id for p in r.processes] == ["p1", "p2", "p0", "p3"]
    assert [p.rank for p in r.processes] == [1, 2, 3, 4]


def test_one_huge_loss_is_abnormal_and_first():
    ps = procs(5)
    losses = {p: 0.001 for p in ps}
    losses[ps[3]] = 100.0
    r = classify_and_rank(losses, thresh(1.0))
    assert r.verdict == ABNORMAL and r.top(1) == [ps[3]]


def test_score_equal_to_threshold_is_benign():
    ps = procs(2)
    r = classify_and_rank({ps[0]: 2.0, ps[1]: 2.0}, thresh(2.0))
    assert r.score == 2.0 and r.verdict == BENIGN


def test_ties_break_by_id_then_version():
    a1 = NodeRef("a", 1, EntityKind.PROCESS, "x")
    a0 = NodeRef("a", 0, EntityKind.PROCESS, "x")
    b0 = NodeRef("b", 0, EntityKind.PROCESS, "x")
    order = [p.node for p in rank_processes({b0: 1.0, a1: 1.0, a0: 1.0})]
    assert order == [a0, a1, b0]


def test_report_json_shape():
    ps = procs(2)
    r = classify_and_rank({ps[0]: 0.5, ps[1]: 0.1}, thresh(0.2), graph_id="g")
    d = json.loads(r.to_json())
    assert set(d) == {"graph_id", "score", "threshold", "verdict", "processes"}
    assert d["processes"][0] == {"base_id": "p0", "version": 0, "name": "c:/p0.exe",
                                 "loss": 0.5, "rank": 1}
    assert "p0" in r.table()


@given(st.lists(st.integers(0, 1000).map(float), min_size=1, max_size=20),
       st.integers(-8, 8))
def test_ranking_scale_invariant(losses, exp):
    ps = procs(len(losses))
    base = [p.node for p in rank_processes(dict(zip(ps, losses)))]
    scaled = [p.node for p in rank_processes({p: l * 2.0 ** exp for p, l in zip(ps, losses)})]
    assert scaled == base
