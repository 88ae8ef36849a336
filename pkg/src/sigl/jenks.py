"""Jenks natural breaks as an exact optimal partition (Fisher's method).

Dynamic programming over the sorted values: ``cost[k][i]`` is the smallest
sum of within-class squared deviations for the first ``i`` values split
into ``k`` contiguous classes.  Segment costs are accumulated with Welford's
update while the segment start moves left, which keeps them accurate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class KTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class JenksPartition:
    values: tuple[float, ...]
    k: int
    breaks: tuple[int, ...]  # start index of each class in ``values``
    means: tuple[float, ...]
    sdcm: float
    sdam: float
    gvf: float

    @property
    def classes(self) -> list[tuple[float, ...]]:
        bounds = list(self.breaks) + [len(self.values)]
        return [self.values[bounds[i]:bounds[i + 1]] for i in range(self.k)]


def squared_deviation(values: Sequence[float]) -> float:
    if len(values) == 0:
        return 0.0
    m = sum(values) / len(values)
    return float(sum((v - m) ** 2 for v in values))


def _segment_costs(x: np.ndarray) -> np.ndarray:
    n = len(x)
    ssd = np.zeros((n, n))  # ssd[s, e] for the segment x[s:e+1]
    mean = np.zeros(n)
    m2 = np.zeros(n)
    for t in range(n):
        e = np.arange(t, n)
        s = e - t
        delta = x[s] - mean[e]
        mean[e] += delta / (t + 1)
        m2[e] += delta * (x[s] - mean[e])
        ssd[s, e] = m2[e]
    return ssd


def _partition(x: np.ndarray, starts: list[int], sdam: float) -> JenksPartition:
    k = len(starts)
    bounds = starts + [len(x)]
    classes = [x[bounds[c]:bounds[c + 1]] for c in range(k)]
    sdcm = float(sum(squared_deviation(list(cl)) for cl in classes))
    gvf = 0.0 if k == 1 or sdam == 0.0 else 1.0 - sdcm / sdam
    return JenksPartition(tuple(float(v) for v in x), k, tuple(starts),
                          tuple(float(np.mean(cl)) for cl in classes), sdcm, sdam, gvf)


def jenks_all(values: Sequence[float], k_max: int) -> list[JenksPartition]:
    """Optimal partitions for every k in 1..k_max from one DP pass."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("values must be nonempty")
    if k_max < 1:
        raise ValueError("k must be >= 1")
    distinct = len(np.unique(x))
    if k_max > distinct:
        raise KTooLarge(f"k={k_max} exceeds the {distinct} distinct values")
    ssd = _segment_costs(x)
    cost = np.full((k_max + 1, n + 1), np.inf)
    back = np.zeros((k_max + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for j in range(1, k_max + 1):
        for i in range(j, n + 1):
            # last class is x[s:i] with s >= j - 1
            s = np.arange(j - 1, i)
            cand = cost[j - 1, s] + ssd[s, i - 1]
            best = int(np.argmin(cand))
            cost[j, i] = cand[best]
            back[j, i] = s[best]
    sdam = squared_deviation(list(x))
    out = []
    for k in range(1, k_max + 1):
        starts = []
        i = n
        for j in range(k, 0, -1):
            i = int(back[j, i])
            starts.append(i)
        out.append(_partition(x, starts[::-1], sdam))
    return out


def jenks_breaks(values: Sequence[float], k: int) -> JenksPartition:
    """Partition minimizing the within-class squared deviation (SDCM)."""
    return jenks_all(values, k)[-1]


def _choose(parts: list[JenksPartition], gvf_cutoff: float) -> JenksPartition:
    if len(parts) == 1:
        return parts[0]
    for p in parts[1:]:
        if p.gvf >= gvf_cutoff:
            return p
    return parts[-1]


def select_k(values: Sequence[float], gvf_cutoff: float = 0.9, k_max: int = 5) -> int:
    """Smallest k >= 2 whose partition reaches ``gvf_cutoff``, else the cap.

    A single distinct value gives k = 1.
    """
    distinct = len(np.unique(np.asarray(values, dtype=np.float64)))
    if distinct == 0:
        raise ValueError("values must be nonempty")
    return _choose(jenks_all(values, min(k_max, distinct)), gvf_cutoff).k


def max_zone_avg(values: Sequence[float], gvf_cutoff: float = 0.9, k_max: int = 5) -> float:
    """Mean of the highest Jenks class of ``values``."""
    distinct = len(np.unique(np.asarray(values, dtype=np.float64)))
    if distinct == 0:
        raise ValueError("values must be nonempty")
    part = _choose(jenks_all(values, min(k_max, distinct)), gvf_cutoff)
    if len(values) < part.k:
        return float(max(values))
    return max(part.means)
