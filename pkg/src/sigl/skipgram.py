"""Skip-gram with negative sampling, vectorized over mini-batches of pairs.

For every (target, context) pair within ``window`` tokens the update
descends

    -log s(w_c . w_t) - sum_k log s(-w_k . w_t)

with ``negatives`` noise tokens w_k drawn from the unigram distribution
raised to 0.75.  Rows touched several times in one batch get the mean of
their updates, so frequent tokens do not take oversized steps.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse


class EmptyCorpus(ValueError):
    pass


class UnknownToken(KeyError):
    def __init__(self, tokens):
        self.tokens = list(tokens)
        super().__init__(f"tokens not in vocabulary: {self.tokens}")


@dataclass
class Vocabulary:
    dim: int
    tokens: list[str]
    vectors: np.ndarray
    counts: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __len__(self) -> int:
        return len(self.tokens)

    def vector(self, token: str) -> np.ndarray:
        try:
            return self.vectors[self.index[token]]
        except KeyError:
            raise UnknownToken([token]) from None

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "params": self.params,
            "tokens": self.tokens,
            "counts": [int(c) for c in self.counts],
            "vectors": {t: [float(x) for x in v] for t, v in zip(self.tokens, self.vectors)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        tokens = list(data["tokens"])
        dim = int(data["dim"])
        vectors = np.array([data["vectors"][t] for t in tokens], dtype=np.float64)
        return cls(dim, tokens, vectors.reshape(len(tokens), dim),
                   np.array(data["counts"], dtype=np.int64), dict(data.get("params", {})))

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls.from_dict(json.loads(text))


def _pairs(ids: np.ndarray, sent: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for c in range(1, window + 1):
        if c >= len(ids):
            break
        same = sent[:-c] == sent[c:]
        left, right = ids[:-c][same], ids[c:][same]
        centers += [left, right]
        contexts += [right, left]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


_DENSE_SCORES = 1 << 22  # batch x vocab entries below which scores are a dense product


def _rows_sum(rows: np.ndarray, V: int, values: np.ndarray) -> np.ndarray:
    """Sum of ``values`` rows grouped by ``rows`` into a (V, d) array."""
    m = sparse.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))),
                          shape=(V, len(rows)))
    return m @ values


def _scatter_mean(target: np.ndarray, rows: np.ndarray, summed: np.ndarray) -> None:
    """Add ``summed[r] / (occurrences of r in rows)`` to every touched row."""
    counts = np.bincount(rows, minlength=len(target))
    touched = counts > 0
    target[touched] += summed[touched] / counts[touched, None]


def train_skipgram(
    sentences: Sequence[Sequence[str]],
    dim: int = 128,
    window: int = 5,
    epochs: int = 20,
    negatives: int = 5,
    seed: int = 0,
    learning_rate: float = 0.025,
    min_learning_rate: float = 1e-4,
    batch_size: int = 2048,
    sample: float = 1e-3,
) -> Vocabulary:
    """Train token vectors on ``sentences``; deterministic for a fixed seed."""
    counter = Counter(tok for s in sentences for tok in s)
    if not counter:
        raise EmptyCorpus("no tokens to train on")
    tokens = sorted(counter, key=lambda t: (-counter[t], t))
    index = {t: i for i, t in enumerate(tokens)}
    counts = np.array([counter[t] for t in tokens], dtype=np.int64)
    V = len(tokens)

    ids = np.fromiter((index[t] for s in sentences for t in s), dtype=np.int64)
    sent = np.repeat(np.arange(len(sentences)), [len(s) for s in sentences])

    rng = np.random.default_rng(seed)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))

    noise = counts.astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    freq = counts / counts.sum()
    if sample > 0:
        keep_prob = np.minimum(1.0, (np.sqrt(freq / sample) + 1.0) * sample / freq)
    else:
        keep_prob = np.ones(V)

    # rough pair count for the learning-rate schedule
    est_pairs = max(1, int(2 * window * (keep_prob[ids].sum())))
    total_batches = max(1, epochs * -(-est_pairs // batch_size))
    step = 0
    for _ in range(epochs):
        kept = rng.random(len(ids)) < keep_prob[ids]
        centers, contexts = _pairs(ids[kept], sent[kept], window)
        if len(centers) == 0:
            continue
        perm = rng.permutation(len(centers))
        centers, contexts = centers[perm], contexts[perm]
        for start in range(0, len(centers), batch_size):
            frac = min(1.0, step / total_batches)
            lr = learning_rate - (learning_rate - min_learning_rate) * frac
            step += 1
            c = centers[start:start + batch_size]
            o = contexts[start:start + batch_size]
            neg = np.searchsorted(noise_cdf, rng.random((len(c), negatives)))
            w = w_in[c]
            ar = np.arange(len(c))
            if len(c) * V <= _DENSE_SCORES:
                scores = w @ w_out.T
                s_pos = scores[ar, o]
                s_neg = np.take_along_axis(scores, neg, axis=1)
            else:
                s_pos = np.einsum("bd,bd->b", w, w_out[o])
                s_neg = np.einsum("bkd,bd->bk", w_out[neg], w)
            # coefficient matrix G (batch x vocab): d loss / d score, scaled by lr
            g = lr * np.concatenate([1.0 - _sigmoid(s_pos), -_sigmoid(s_neg).ravel()])
            rows = np.concatenate([ar, np.repeat(ar, negatives)])
            cols = np.concatenate([o, neg.ravel()])
            G = sparse.csr_matrix((g, (rows, cols)), shape=(len(c), V))
            grad_w = G @ w_out
            _scatter_mean(w_out, cols, G.T @ w)
            _scatter_mean(w_in, c, _rows_sum(c, V, grad_w))

    params = {"window": window, "epochs": epochs, "negatives": negatives, "seed": seed,
              "learning_rate": learning_rate, "sample": sample, "batch_size": batch_size}
    return Vocabulary(dim, tokens, w_in, counts, params)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))
