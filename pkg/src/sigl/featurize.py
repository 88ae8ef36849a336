"""Node features from path components.

A node's name is split into components, every component gets a skip-gram
vector learned from directed random walks over the training graphs, and the
node vector is the L2-normalized mean of its component vectors.  Components
never seen in training are inferred with an "a la carte" linear map applied
to the average embedding of their context words.
"""
from __future__ import annotations

import ipaddress
import json
import re
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .audit import EntityKind
from .graph import SIG, NodeRef, topological_order
from .skipgram import EmptyCorpus, UnknownToken, Vocabulary, train_skipgram

__all__ = [
    "RAND_TOKEN", "CausalContext", "AlaCarteTransform", "EmptyCorpus", "UnknownToken",
    "InsufficientContexts", "tokenize_name", "tokenize_node", "generate_walks",
    "walk_sentences", "train_component_vocab", "embed_node", "fit_alacarte",
    "embed_oov", "additive_embeddings", "Featurizer",
]

RAND_TOKEN = "⟨rand⟩"

_HEX_RUN = re.compile(r"[0-9a-f]+")


class InsufficientContexts(ValueError):
    pass


def port_bucket(port: int) -> str:
    if port <= 1023:
        return "port_well_known"
    if port <= 49151:
        return "port_registered"
    return "port_ephemeral"


def looks_generated(token: str) -> bool:
    """Heuristic for machine-generated names such as ``nsx4f2a9b1.tmp``.

    The extension (up to four characters) is ignored; the remaining stem must
    be at least six characters long and at least half of it must be covered by
    hexadecimal runs that contain a digit.
    """
    stem = token
    head, dot, ext = token.rpartition(".")
    if dot and head and 0 < len(ext) <= 4:
        stem = head
    if len(stem) < 6:
        return False
    covered = sum(len(m) for m in _HEX_RUN.findall(stem) if any(ch.isdigit() for ch in m))
    return covered * 2 >= len(stem)


def _tokenize_socket(name: str) -> list[str] | None:
    host, sep, port = name.rpartition(":")
    if not sep or not port.isdigit():
        return None
    try:
        addr = ipaddress.ip_address(host.strip("[]"))
    except ValueError:
        parts = [p for p in host.split(".") if p]
    else:
        if addr.version == 4:
            parts = host.split(".")
        else:
            parts = [p for p in addr.exploded.split(":")]
    return parts + [port_bucket(int(port))]


def tokenize_name(name: str, kind: EntityKind = EntityKind.FILE) -> list[str]:
    if kind is EntityKind.SOCKET:
        tokens = _tokenize_socket(name)
        if tokens is not None:
            return tokens
    tokens = [t for t in name.replace("\\", "/").lower().split("/") if t]
    return [RAND_TOKEN if looks_generated(t) else t for t in tokens]


def tokenize_node(node: NodeRef) -> list[str]:
    return tokenize_name(node.name, node.kind)


@dataclass(frozen=True)
class CausalContext:
    source: NodeRef
    walk: tuple[NodeRef, ...]


def _node_seed(seed: int, node: NodeRef) -> np.random.Generator:
    return np.random.default_rng(
        [seed, zlib.crc32(node.base_id.encode("utf-8")), node.version])


def generate_walks(sig: SIG, walks_per_node: int = 10, length: int = 10,
                   seed: int = 0) -> list[CausalContext]:
    """Directed random walks; each step picks an outgoing edge uniformly."""
    if walks_per_node < 1 or length < 1:
        raise ValueError("walks_per_node and length must be >= 1")
    out = {
        n: sorted(sig.out_edges(n), key=lambda e: (e.dst.base_id, e.dst.version, int(e.etype)))
        for n in sig.nodes
    }
    contexts = []
    for node in topological_order(sig):
        rng = _node_seed(seed, node)
        for _ in range(walks_per_node):
            walk = []
            cur = node
            for _ in range(length):
                edges = out[cur]
                if not edges:
                    break
                cur = edges[int(rng.integers(len(edges)))].dst
                walk.append(cur)
            contexts.append(CausalContext(node, tuple(walk)))
    return contexts


def walk_sentences(contexts: Iterable[CausalContext]) -> list[list[str]]:
    cache: dict[NodeRef, list[str]] = {}

    def toks(n):
        if n not in cache:
            cache[n] = tokenize_node(n)
        return cache[n]

    return [[t for n in (c.source, *c.walk) for t in toks(n)] for c in contexts]


def train_component_vocab(contexts: Sequence[CausalContext] | Sequence[Sequence[str]],
                          dim: int = 128, window: int = 5, epochs: int = 20,
                          negatives: int = 5, seed: int = 0, **kwargs) -> Vocabulary:
    if contexts and isinstance(contexts[0], CausalContext):
        sentences = walk_sentences(contexts)
    else:
        sentences = [list(s) for s in contexts]
    return train_skipgram(sentences, dim=dim, window=window, epochs=epochs,
                          negatives=negatives, seed=seed, **kwargs)


def _normalized_mean(vectors: list[np.ndarray], dim: int) -> np.ndarray:
    if not vectors:
        return np.zeros(dim)
    v = np.mean(vectors, axis=0)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else np.zeros(dim)


def embed_node(vocab: Vocabulary, node: NodeRef) -> np.ndarray:
    tokens = tokenize_node(node)
    missing = [t for t in tokens if t not in vocab]
    if missing:
        raise UnknownToken(missing)
    return _normalized_mean([vocab.vector(t) for t in tokens], vocab.dim)


def additive_embeddings(vocab: Vocabulary, sentences: Sequence[Sequence[str]],
                        window: int, only: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Average, over each occurrence of a token, of the mean known-token
    vector in its surrounding window.

    Occurrences whose window holds no in-vocabulary token are skipped; tokens
    with no usable occurrence are absent from the result.
    """
    only = None if only is None else set(only)
    names: dict[str, int] = {}
    flat = [t for s in sentences for t in s]
    if not flat:
        return {}
    name_ids = np.fromiter((names.setdefault(t, len(names)) for t in flat), dtype=np.int64)
    lookup = np.array([vocab.index.get(t, -1) for t in names], dtype=np.int64)
    known = lookup[name_ids]
    sent = np.repeat(np.arange(len(sentences)), [len(s) for s in sentences])
    n = len(flat)

    # neighbours at each nonzero offset that are in the same sentence and known
    offsets = [o for o in range(-window, window + 1) if o != 0 and abs(o) < n]
    pos = np.arange(n)
    valid, neigh = [], []
    for o in offsets:
        q = pos + o
        ok = (q >= 0) & (q < n)
        qc = np.clip(q, 0, n - 1)
        ok &= (sent[qc] == sent) & (known[qc] >= 0)
        valid.append(ok)
        neigh.append(known[qc])
    valid = np.array(valid)
    neigh = np.array(neigh)
    n_ctx = valid.sum(axis=0)
    use = n_ctx > 0
    if only is not None:
        wanted = np.array([t in only for t in names])
        use &= wanted[name_ids]
    if not use.any():
        return {}
    sel = valid & use[None, :]
    rows = np.broadcast_to(name_ids, valid.shape)[sel]
    cols = neigh[sel]
    weights = np.broadcast_to(1.0 / np.maximum(n_ctx, 1), valid.shape)[sel]
    m = sparse.coo_matrix((weights, (rows, cols)), shape=(len(names), len(vocab))).tocsr()
    occurrences = np.bincount(name_ids[use], minlength=len(names))
    tokens = list(names)
    u = m @ vocab.vectors
    return {tokens[r]: u[r] / occurrences[r] for r in np.flatnonzero(occurrences)}


@dataclass
class AlaCarteTransform:
    matrix: np.ndarray
    lam: float
    window: int = 5

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)

    def apply(self, additive: np.ndarray) -> np.ndarray:
        return self.matrix @ additive

    def to_json(self) -> str:
        d = self.matrix.shape[0]
        return json.dumps({"dim": d, "lambda": self.lam, "window": self.window,
                           "matrix": [float(x) for x in self.matrix.ravel()]})

    @classmethod
    def from_json(cls, text: str) -> "AlaCarteTransform":
        data = json.loads(text)
        d = data["dim"]
        return cls(np.array(data["matrix"], dtype=np.float64).reshape(d, d),
                   data["lambda"], data["window"])


def solve_alacarte(targets: np.ndarray, additive: np.ndarray, lam: float) -> np.ndarray:
    """Ridge regression of ``targets`` rows on ``additive`` rows.

    Returns ``A`` minimizing ``sum ||v - A u||^2 + lam ||A||_F^2``; with
    ``lam == 0`` the minimum-norm least-squares solution.
    """
    if lam > 0:
        d = additive.shape[1]
        gram = additive.T @ additive + lam * np.eye(d)
        sol = np.linalg.solve(gram, additive.T @ targets)
    else:
        sol, *_ = np.linalg.lstsq(additive, targets, rcond=None)
    # contiguous, so products round the same way as after a save/load
    return np.ascontiguousarray(sol.T)


def fit_alacarte(vocab: Vocabulary, contexts: Sequence[CausalContext] | Sequence[Sequence[str]],
                 lam: float = 1e-2, window: int = 5) -> AlaCarteTransform:
    if contexts and isinstance(contexts[0], CausalContext):
        sentences = walk_sentences(contexts)
    else:
        sentences = [list(s) for s in contexts]
    add = additive_embeddings(vocab, sentences, window)
    toks = [t for t in vocab.tokens if t in add]
    if not toks:
        raise InsufficientContexts("no vocabulary token has a usable context")
    u = np.array([add[t] for t in toks])
    v = np.array([vocab.vector(t) for t in toks])
    return AlaCarteTransform(solve_alacarte(v, u, lam), lam, window)


def _sentinel(vocab: Vocabulary) -> np.ndarray:
    if RAND_TOKEN in vocab:
        return vocab.vector(RAND_TOKEN)
    return np.zeros(vocab.dim)


def embed_oov(transform: AlaCarteTransform, vocab: Vocabulary, node: NodeRef,
              node_contexts: Sequence[CausalContext] | Sequence[Sequence[str]],
              additive: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Embed a node whose components may be out of vocabulary.

    Unknown components are inferred from ``node_contexts`` (walks over the
    graph being scored); a component with no usable context falls back to
    the sentinel vector.
    """
    tokens = tokenize_node(node)
    unknown = [t for t in tokens if t not in vocab]
    if unknown and additive is None:
        if node_contexts and isinstance(node_contexts[0], CausalContext):
            sentences = walk_sentences(node_contexts)
        else:
            sentences = [list(s) for s in node_contexts]
        additive = additive_embeddings(vocab, sentences, transform.window, only=unknown)
    vecs = []
    for t in tokens:
        if t in vocab:
            vecs.append(vocab.vector(t))
        elif t in additive:
            vecs.append(transform.apply(additive[t]))
        else:
            vecs.append(_sentinel(vocab))
    return _normalized_mean(vecs, vocab.dim)


@dataclass
class Featurizer:
    """Trained vocabulary plus a la carte map, with the walk settings used."""

    vocab: Vocabulary
    transform: AlaCarteTransform
    walks_per_node: int = 10
    walk_length: int = 10
    seed: int = 0

    @classmethod
    def fit(cls, graphs: Sequence[SIG], dim: int = 128, window: int = 5,
            walks_per_node: int = 10, walk_length: int = 10, negatives: int = 5,
            epochs: int = 20, seed: int = 0, lam: float = 1e-2, **kwargs) -> "Featurizer":
        contexts = []
        for i, g in enumerate(graphs):
            contexts += generate_walks(g, walks_per_node, walk_length, seed + i)
        sentences = walk_sentences(contexts)
        vocab = train_skipgram(sentences, dim=dim, window=window, epochs=epochs,
                               negatives=negatives, seed=seed, **kwargs)
        transform = fit_alacarte(vocab, sentences, lam=lam, window=window)
        return cls(vocab, transform, walks_per_node, walk_length, seed)

    def embed_graph(self, sig: SIG) -> dict[NodeRef, np.ndarray]:
        token_map = {n: tokenize_node(n) for n in sig.nodes}
        unknown = {t for toks in token_map.values() for t in toks if t not in self.vocab}
        additive: dict[str, np.ndarray] = {}
        if unknown:
            sentences = walk_sentences(
                generate_walks(sig, self.walks_per_node, self.walk_length, self.seed))
            additive = additive_embeddings(self.vocab, sentences, self.transform.window,
                                           only=unknown)
        out = {}
        for n in sig.nodes:
            if any(t in unknown for t in token_map[n]):
                out[n] = embed_oov(self.transform, self.vocab, n, (), additive=additive)
            else:
                out[n] = embed_node(self.vocab, n)
        return out
