import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigl import synth
from sigl.audit import EntityKind, Relation, parse_events, serialize_events
from sigl.graph import build_dependency_graph, build_sig, is_acyclic

TEMPLATES = list(synth.TEMPLATES)


def shape(trace):
    return [(e.relation, e.object_kind) for e in trace.events]


def names(trace):
    out = {}
    for e in trace.events:
        out[e.subject_id] = e.subject_name
        out[e.object_id] = e.object_name
    return out


@pytest.mark.parametrize("name", TEMPLATES)
def test_same_seed_same_bytes(name):
    t = synth.TEMPLATES[name]
    a, b = synth.gen_benign_trace(t, 3), synth.gen_benign_trace(t, 3)
    assert serialize_events(a.events) == serialize_events(b.events)
    assert serialize_events(a.events) != serialize_events(synth.gen_benign_trace(t, 4).events)


def test_template_sizes_span_the_range():
    sizes = [len(synth.gen_benign_trace(t, 0).events) for t in synth.TEMPLATES.values()]
    assert min(sizes) >= 30 and max(sizes) <= 900
    assert max(sizes) > 5 * min(sizes)


@pytest.mark.parametrize("name", ["ziplite", "devkit"])
def test_hundred_seeds_build_acyclic_sigs_with_targets(name):
    t = synth.TEMPLATES[name]
    for seed in range(100):
        trace = synth.gen_benign_trace(t, seed)
        sig = build_sig(trace.events, trace.targets)
        assert is_acyclic(sig)
        assert {n.name for n in sig.targets} == set(trace.targets)


@pytest.mark.parametrize("name", TEMPLATES)
def test_zero_jitter_structure_is_seed_independent(name):
    t = synth.zero_jitter(synth.TEMPLATES[name])
    base = synth.gen_benign_trace(t, 0)
    for seed in (1, 2, 7):
        assert shape(synth.gen_benign_trace(t, seed)) == shape(base)


def test_jitter_changes_counts():
    t = synth.TEMPLATES["mediabox"]
    assert len({len(synth.gen_benign_trace(t, s).events) for s in range(10)}) > 1


def new_processes(benign, malicious):
    old = {e.subject_id for e in benign.events} | {e.object_id for e in benign.events}
    return {e.object_id for e in malicious.events
            if e.relation is Relation.START and e.object_id not in old}


def test_beacon_bundle_adds_one_talking_process():
    t = synth.TEMPLATES["textpad"]
    benign = synth.gen_benign_trace(t, 5)
    mal = synth.inject_bundle(benign, synth.PROFILES["beacon"], 5)
    new = new_processes(benign, mal)
    # the wrapper plus the malware; only the malware talks to the network
    assert len(new) == 2
    old_sockets = {e.object_id for e in benign.events if e.object_kind is EntityKind.SOCKET}
    talkers = {e.subject_id for e in mal.events
               if e.relation in (Relation.SEND, Relation.RECEIVE) and e.subject_id in new}
    assert len(talkers) == 1
    (pid,) = talkers
    rels = {e.relation for e in mal.events if e.subject_id == pid
            and e.object_kind is EntityKind.SOCKET}
    assert rels == {Relation.SEND, Relation.RECEIVE}
    sockets = {e.object_id for e in mal.events if e.subject_id == pid
               and e.object_kind is EntityKind.SOCKET}
    assert sockets and not sockets & old_sockets
    assert set(mal.labels["malicious_processes"]) == new


def test_bundle_wrapper_starts_root_and_malware():
    benign = synth.gen_benign_trace(synth.TEMPLATES["ziplite"], 1)
    mal = synth.inject_bundle(benign, synth.PROFILES["shell"], 1)
    wrapper = mal.meta["root"]
    started = {e.object_id for e in mal.events
               if e.subject_id == wrapper and e.relation is Relation.START}
    assert benign.meta["root"] in started and len(started) == 2


def test_empty_profile_rejected():
    with pytest.raises(ValueError):
        synth.MalwareProfile()


def test_bundle_of_bundle_nests_and_stays_acyclic():
    t = synth.TEMPLATES["ziplite"]
    once = synth.inject_bundle(synth.gen_benign_trace(t, 2), synth.PROFILES["beacon"], 2)
    twice = synth.inject_bundle(once, synth.PROFILES["ransom"], 3)
    assert twice.labels["mode"] == "bundle+bundle"
    outer, inner = twice.meta["root"], once.meta["root"]
    assert any(e.subject_id == outer and e.object_id == inner and e.relation is Relation.START
               for e in twice.events)
    assert set(once.labels["malicious_ids"]) < set(twice.labels["malicious_ids"])
    assert is_acyclic(build_dependency_graph(twice.events))
    assert is_acyclic(build_sig(twice.events, twice.targets))


@pytest.mark.parametrize("seed", range(5))
def test_embed_timestamps_inside_benign_span(seed):
    benign = synth.gen_benign_trace(synth.TEMPLATES["mediabox"], seed)
    mal = synth.inject_embed(benign, synth.PROFILES["full"], seed)
    lo, hi = benign.meta["span"]
    added = Counter(mal.events) - Counter(benign.events)
    assert added and all(lo <= e.timestamp <= hi for e in added)


def test_payload_drop_writes_then_executes_new_exe():
    benign = synth.gen_benign_trace(synth.TEMPLATES["devkit"], 4)
    mal = synth.inject_embed(benign, synth.PROFILES["dropper"], 4)
    lineage = set(benign.meta["lineage"])
    old_files = {e.object_id for e in benign.events}
    written = {}
    for e in mal.events:
        if (e.relation is Relation.WRITE and e.object_name.endswith(".exe")
                and e.object_id not in old_files):
            written.setdefault(e.object_id, (e.subject_id, e.timestamp))
    executed = [(e.object_id, e.timestamp) for e in mal.events
                if e.relation is Relation.EXECUTE and e.object_id in written]
    assert any(written[f][1] < ts for f, ts in executed)
    # the host is an installer-lineage process and it drops the first executable
    assert mal.meta["host"] in lineage
    assert any(w == mal.meta["host"] for w, _ in written.values())


def test_same_seed_same_injected_ids():
    benign = synth.gen_benign_trace(synth.TEMPLATES["textpad"], 9)
    a = synth.inject_embed(benign, synth.PROFILES["full"], 9)
    b = synth.inject_embed(benign, synth.PROFILES["full"], 9)
    assert a.labels["malicious_ids"] == b.labels["malicious_ids"]
    assert serialize_events(a.events) == serialize_events(b.events)


@pytest.mark.parametrize("profile", list(synth.PROFILES))
def test_bundle_keeps_benign_events_verbatim(profile):
    benign = synth.gen_benign_trace(synth.TEMPLATES["textpad"], 11)
    mal = synth.inject_bundle(benign, synth.PROFILES[profile], 11)
    assert not Counter(benign.events) - Counter(mal.events)
    # benign events keep their relative order
    kept = [e for e in mal.events if e in set(benign.events)]
    assert kept == benign.events


def test_labels_only_in_sidecar(tmp_path):
    mal = synth.gen_malicious_trace(synth.TEMPLATES["ziplite"], 3, "bundle", "full")
    trace_path, label_path = mal.write(tmp_path / "m")
    text = open(trace_path).read()
    assert "malicious" not in text and "label" not in text
    assert all(set(json.loads(line)) == {"ts", "sub", "sub_name", "obj", "obj_name", "kind", "rel"}
               for line in text.splitlines())
    side = json.load(open(label_path))
    assert side["label"] == "malicious" and side["malicious_processes"]


@settings(max_examples=30)
@given(st.sampled_from(TEMPLATES), st.integers(0, 10_000), st.sampled_from(["bundle", "embed"]),
       st.sampled_from(list(synth.PROFILES)))
def test_malicious_traces_parse_build_and_add_processes(name, seed, mode, profile):
    t = synth.TEMPLATES[name]
    mal = synth.gen_malicious_trace(t, seed, mode, profile)
    benign = synth.gen_benign_trace(t, seed)
    assert parse_events(serialize_events(mal.events)) == mal.events
    sig = build_sig(mal.events, mal.targets)
    assert is_acyclic(sig)
    labeled = set(mal.labels["malicious_processes"])
    assert labeled and not labeled & set(names(benign))
    assert labeled <= {n.base_id for n in sig.nodes}
