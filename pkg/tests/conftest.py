"""Shared fixtures: event constructors and a random valid-event strategy."""
from __future__ import annotations

from hypothesis import settings
from hypothesis import strategies as st

from sigl.audit import RELATION_OBJECT_KIND, AuditEvent, EntityKind, Relation

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

PREFIX = {EntityKind.PROCESS: "p", EntityKind.FILE: "f", EntityKind.SOCKET: "s"}


def ev(ts, sub, rel, obj, obj_name=None, sub_name=None, kind=None):
    """Terse event builder: ``ev(1, "p1", "Write", "f1")``."""
    rel = Relation(rel)
    kind = kind or RELATION_OBJECT_KIND[rel]
    return AuditEvent(ts, sub, sub_name or f"c:/bin/{sub}.exe", obj,
                      obj_name or _default_name(obj, kind), kind, rel)


def _default_name(obj, kind):
    if kind is EntityKind.SOCKET:
        return "10.0.0.1:443"
    if kind is EntityKind.PROCESS:
        return f"c:/bin/{obj}.exe"
    return f"c:/data/{obj}.exe"


@st.composite
def event_sequences(draw, max_events=25, n_proc=4, n_file=4, n_sock=2, max_gap=5):
    """Timestamp-ordered valid events over a small id space."""
    n = draw(st.integers(0, max_events))
    ts = 0
    out = []
    for _ in range(n):
        ts += draw(st.integers(0, max_gap))
        rel = draw(st.sampled_from(list(Relation)))
        kind = RELATION_OBJECT_KIND[rel]
        sub = f"p{draw(st.integers(0, n_proc - 1))}"
        pool = {EntityKind.PROCESS: n_proc, EntityKind.FILE: n_file, EntityKind.SOCKET: n_sock}[kind]
        obj = f"{PREFIX[kind]}{draw(st.integers(0, pool - 1))}"
        out.append(ev(ts, sub, rel, obj))
    return out
