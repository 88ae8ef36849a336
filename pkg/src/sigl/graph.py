"""Software installation graphs built from audit events.

Edges follow information flow: a process that reads, executes or receives
from an object gets an ``object -> process`` edge, every other relation
produces ``process -> object``.  Entities are split into versions whenever
an edge would land on a node that already has outgoing edges, which keeps
the graph acyclic by construction.
"""
from __future__ import annotations

import enum
import heapq
import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .audit import AuditEvent, EntityKind, Relation

DEFAULT_SERVICES = (
    "svchost.exe",
    "services.exe",
    "lsass.exe",
    "wmiprvse.exe",
    "searchindexer.exe",
    "trustedinstaller.exe",
    "explorer.exe",
)
DEFAULT_TIME_BOUND = 300.0  # seconds


class EdgeType(enum.IntEnum):
    """Stable edge-type ids; the index selects graph-LSTM weights."""

    START = 0
    END = 1
    RENAME = 2
    READ = 3
    WRITE = 4
    EXECUTE = 5
    DELETE = 6
    SEND = 7
    RECEIVE = 8
    VERSION = 9

    @classmethod
    def from_relation(cls, rel: Relation) -> "EdgeType":
        return cls[rel.name]

    @property
    def label(self) -> str:
        return self.name.capitalize()


EDGE_TYPE_COUNT = len(EdgeType)

# relations whose information flows from the object into the subject
INBOUND = frozenset({Relation.READ, Relation.EXECUTE, Relation.RECEIVE})


class GraphError(ValueError):
    pass


class TargetNotFound(GraphError):
    def __init__(self, name: str):
        super().__init__(f"no file node matches target {name!r}")
        self.name = name


class IdentityClash(GraphError):
    pass


class CycleDetected(GraphError):
    pass


@dataclass(frozen=True, order=True)
class NodeRef:
    base_id: str
    version: int
    kind: EntityKind = field(compare=False)
    name: str = field(compare=False)

    @property
    def key(self) -> tuple[str, int]:
        return (self.base_id, self.version)

    def __repr__(self) -> str:
        return f"{self.base_id}v{self.version}"


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    etype: EdgeType
    timestamp: int


@dataclass(frozen=True)
class SIG:
    nodes: frozenset[NodeRef] = frozenset()
    edges: tuple[Edge, ...] = ()
    targets: frozenset[NodeRef] = frozenset()

    @cached_property
    def successors(self) -> dict[NodeRef, list[Edge]]:
        out = defaultdict(list)
        for e in self.edges:
            out[e.src].append(e)
        return dict(out)

    @cached_property
    def predecessors(self) -> dict[NodeRef, list[Edge]]:
        inc = defaultdict(list)
        for e in self.edges:
            inc[e.dst].append(e)
        return dict(inc)

    def out_edges(self, node: NodeRef) -> list[Edge]:
        return self.successors.get(node, [])

    def in_edges(self, node: NodeRef) -> list[Edge]:
        return self.predecessors.get(node, [])

    @property
    def processes(self) -> list[NodeRef]:
        return sorted(n for n in self.nodes if n.kind is EntityKind.PROCESS)

    def to_dict(self) -> dict:
        order = topological_order(self)
        index = {n: i for i, n in enumerate(order)}
        edges = sorted(self.edges, key=lambda e: (
            index[e.src], index[e.dst], int(e.etype), e.timestamp))
        return {
            "nodes": [_node_dict(n) for n in order],
            "edges": [
                {"src": _node_dict(e.src, brief=True),
                 "dst": _node_dict(e.dst, brief=True),
                 "relation": e.etype.label,
                 "timestamp": e.timestamp}
                for e in edges
            ],
            "targets": [_node_dict(n, brief=True) for n in sorted(self.targets)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "SIG":
        nodes = {}
        for n in data["nodes"]:
            ref = NodeRef(n["base_id"], n["version"], EntityKind(n["kind"]), n["name"])
            nodes[ref.key] = ref
        edges = tuple(
            Edge(nodes[(e["src"]["base_id"], e["src"]["version"])],
                 nodes[(e["dst"]["base_id"], e["dst"]["version"])],
                 EdgeType[e["relation"].upper()], e["timestamp"])
            for e in data["edges"]
        )
        targets = frozenset(nodes[(t["base_id"], t["version"])] for t in data["targets"])
        return cls(frozenset(nodes.values()), edges, targets)

    @classmethod
    def from_json(cls, text: str) -> "SIG":
        return cls.from_dict(json.loads(text))


def _node_dict(n: NodeRef, brief: bool = False) -> dict:
    if brief:
        return {"base_id": n.base_id, "version": n.version}
    return {"base_id": n.base_id, "version": n.version,
            "kind": n.kind.value, "name": n.name}


def build_dependency_graph(events: Sequence[AuditEvent]) -> SIG:
    """Turn timestamp-ordered events into a versioned dependency DAG."""
    latest: dict[str, NodeRef] = {}
    nodes: list[NodeRef] = []
    edges: list[Edge] = []
    seen_edges: set[tuple] = set()
    has_out: set[NodeRef] = set()

    def resolve(base_id: str, kind: EntityKind, name: str) -> NodeRef:
        node = latest.get(base_id)
        if node is None:
            node = NodeRef(base_id, 0, kind, name)
            latest[base_id] = node
            nodes.append(node)
        elif node.kind is not kind:
            raise GraphError(
                f"entity {base_id!r} used as both {node.kind.value} and {kind.value}")
        return node

    def add_edge(src: NodeRef, dst: NodeRef, etype: EdgeType, ts: int) -> None:
        key = (src.key, dst.key, etype)
        if key in seen_edges:
            return
        seen_edges.add(key)
        edges.append(Edge(src, dst, etype, ts))
        has_out.add(src)

    for ev in events:
        subj = resolve(ev.subject_id, EntityKind.PROCESS, ev.subject_name)
        obj = resolve(ev.object_id, ev.object_kind, ev.object_name)
        src, dst = (obj, subj) if ev.relation in INBOUND else (subj, obj)
        if dst in has_out or dst.base_id == src.base_id:
            bumped = NodeRef(dst.base_id, dst.version + 1, dst.kind, dst.name)
            latest[dst.base_id] = bumped
            nodes.append(bumped)
            add_edge(dst, bumped, EdgeType.VERSION, ev.timestamp)
            dst = bumped
        add_edge(src, dst, EdgeType.from_relation(ev.relation), ev.timestamp)
    return SIG(frozenset(nodes), tuple(edges), frozenset())


def _matches(name: str, target: str) -> bool:
    target = target.replace("\\", "/").lower()
    return name == target or name.endswith("/" + target)


def find_targets(full: SIG, target_names: Iterable[str]) -> frozenset[NodeRef]:
    """Latest version of every file entity whose name matches a target."""
    latest: dict[str, NodeRef] = {}
    for n in full.nodes:
        if n.kind is EntityKind.FILE:
            cur = latest.get(n.base_id)
            if cur is None or n.version > cur.version:
                latest[n.base_id] = n
    found = set()
    for t in target_names:
        hits = [n for n in latest.values() if _matches(n.name, t)]
        if not hits:
            raise TargetNotFound(t)
        found.update(hits)
    return frozenset(found)


def is_service(node: NodeRef, services: Iterable[str]) -> bool:
    if node.kind is not EntityKind.PROCESS:
        return False
    base = node.name.rsplit("/", 1)[-1]
    return base in set(services)


def service_entry_times(full: SIG, services: Iterable[str]) -> dict[NodeRef, int]:
    """Earliest outgoing-edge timestamp of each service node in the graph."""
    services = set(services)
    entry = {}
    for n in full.nodes:
        if is_service(n, services):
            outs = full.out_edges(n)
            if outs:
                entry[n] = min(e.timestamp for e in outs)
    return entry


def edge_within_bound(edge: Edge, entry: dict[NodeRef, int], bound_us: float) -> bool:
    start = entry.get(edge.dst)
    return start is None or edge.timestamp >= start - bound_us


def backtrack(
    full: SIG,
    target_names: Iterable[str],
    time_bound: float = DEFAULT_TIME_BOUND,
    services: Iterable[str] = DEFAULT_SERVICES,
) -> SIG:
    """Reverse reachability from the target file nodes.

    Edges entering a generic service process are only followed when they are
    no older than ``time_bound`` seconds before the service's first outgoing
    edge, which stops the walk from drifting into days of unrelated history.
    """
    target_names = list(target_names)
    if not target_names:
        raise GraphError("at least one target name is required")
    targets = find_targets(full, target_names)
    entry = service_entry_times(full, services)
    bound_us = time_bound * 1e6

    keep_nodes = set(targets)
    keep_edges = []
    queue = deque(sorted(targets))
    while queue:
        node = queue.popleft()
        for e in full.in_edges(node):
            if not edge_within_bound(e, entry, bound_us):
                continue
            keep_edges.append(e)
            if e.src not in keep_nodes:
                keep_nodes.add(e.src)
                queue.append(e.src)
    return SIG(frozenset(keep_nodes), tuple(keep_edges), targets)


def merge_sigs(parts: Sequence[SIG]) -> SIG:
    nodes: dict[tuple, NodeRef] = {}
    for part in parts:
        for n in part.nodes:
            prev = nodes.setdefault(n.key, n)
            if prev.kind is not n.kind or prev.name != n.name:
                raise IdentityClash(f"{n!r} has conflicting attributes")
    edges: dict[tuple, Edge] = {}
    for part in parts:
        for e in part.edges:
            edges.setdefault((e.src.key, e.dst.key, e.etype, e.timestamp), e)
    targets = frozenset(t for part in parts for t in part.targets)
    return SIG(frozenset(nodes.values()), tuple(edges.values()), targets)


def topological_order(sig: SIG) -> list[NodeRef]:
    """Kahn's algorithm; ties go to the earliest incident edge, then the id."""
    first_seen: dict[NodeRef, float] = {}
    indeg = {n: 0 for n in sig.nodes}
    for e in sig.edges:
        indeg[e.dst] += 1
        for n in (e.src, e.dst):
            if e.timestamp < first_seen.get(n, math.inf):
                first_seen[n] = e.timestamp

    def key(n: NodeRef):
        return (first_seen.get(n, 0), n.base_id, n.version)

    heap = [(key(n), n) for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, n = heapq.heappop(heap)
        order.append(n)
        for e in sig.out_edges(n):
            indeg[e.dst] -= 1
            if indeg[e.dst] == 0:
                heapq.heappush(heap, (key(e.dst), e.dst))
    if len(order) != len(sig.nodes):
        raise CycleDetected(f"{len(sig.nodes) - len(order)} node(s) lie on a cycle")
    return order


def is_acyclic(sig: SIG) -> bool:
    try:
        topological_order(sig)
    except CycleDetected:
        return False
    return True


def build_sig(
    events: Sequence[AuditEvent],
    target_names: Iterable[str] | None = None,
    time_bound: float = DEFAULT_TIME_BOUND,
    services: Iterable[str] = DEFAULT_SERVICES,
) -> SIG:
    """Full graph, then one backtrace per target merged into a single SIG.

    Without explicit targets every executable file written during the trace
    is treated as an installed executable.
    """
    full = build_dependency_graph(events)
    if target_names is None:
        target_names = infer_targets(events)
    target_names = list(target_names)
    if not target_names:
        raise GraphError("trace has no installed executables to backtrack from")
    services = tuple(services)
    parts = [backtrack(full, [t], time_bound, services) for t in target_names]
    return merge_sigs(parts)


def infer_targets(events: Iterable[AuditEvent], suffixes=(".exe",)) -> list[str]:
    names = []
    for ev in events:
        if (ev.relation in (Relation.WRITE, Relation.RENAME)
                and ev.object_kind is EntityKind.FILE
                and ev.object_name.endswith(tuple(suffixes))
                and ev.object_name not in names):
            names.append(ev.object_name)
    return names


def to_dot(sig: SIG, scores: dict[NodeRef, float] | None = None, top: int = 10) -> str:
    """Graphviz source; the ``top`` highest-scoring processes are filled red."""
    order = topological_order(sig)
    index = {n: i for i, n in enumerate(order)}
    hot = set()
    if scores:
        ranked = sorted(scores, key=lambda n: (-scores[n], n.base_id, n.version))
        hot = set(ranked[:top])
    shapes = {EntityKind.PROCESS: "box", EntityKind.FILE: "ellipse",
              EntityKind.SOCKET: "diamond"}
    lines = ["digraph sig {", "  rankdir=LR;"]
    for n in order:
        label = f"{n.name}\\nv{n.version}"
        if scores and n in scores:
            label += f"\\n{scores[n]:.3g}"
        attrs = [f'label="{label}"', f"shape={shapes[n.kind]}"]
        if n in hot:
            attrs.append('style=filled fillcolor="#f28b82"')
        if n in sig.targets:
            attrs.append("peripheries=2")
        lines.append(f"  n{index[n]} [{' '.join(attrs)}];")
    for e in sorted(sig.edges, key=lambda e: (index[e.src], index[e.dst], e.etype)):
        lines.append(f'  n{index[e.src]} -> n{index[e.dst]} [label="{e.etype.label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
