"""Graph verdicts from process reconstruction losses."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph import NodeRef
from .jenks import max_zone_avg

BENIGN = "benign"
ABNORMAL = "abnormal"


class TooFewGraphs(ValueError):
    pass


@dataclass(frozen=True)
class Threshold:
    value: float
    mean: float
    std: float
    scores: tuple[float, ...]
    multiplier: float = 3.0
    gvf_cutoff: float = 0.9
    k_max: int = 5

    def to_dict(self) -> dict:
        return {"value": self.value, "mean": self.mean, "std": self.std,
                "scores": list(self.scores), "multiplier": self.multiplier,
                "gvf_cutoff": self.gvf_cutoff, "k_max": self.k_max}

    @classmethod
    def from_dict(cls, data: dict) -> "Threshold":
        return cls(data["value"], data["mean"], data["std"], tuple(data["scores"]),
                   data["multiplier"], data["gvf_cutoff"], data["k_max"])

    def with_multiplier(self, multiplier: float) -> "Threshold":
        return Threshold(self.mean + multiplier * self.std, self.mean, self.std,
                         self.scores, multiplier, self.gvf_cutoff, self.k_max)


def compute_threshold(validation_losses: Sequence[Sequence[float]], multiplier: float = 3.0,
                      gvf_cutoff: float = 0.9, k_max: int = 5) -> Threshold:
    """mean + multiplier * std (population) of each graph's max-zone average."""
    if len(validation_losses) < 2:
        raise TooFewGraphs(f"need at least 2 validation graphs, got {len(validation_losses)}")
    scores = [max_zone_avg(list(l), gvf_cutoff, k_max) for l in validation_losses]
    mean = float(np.mean(scores))
    std = float(np.std(scores))
    return Threshold(mean + multiplier * std, mean, std, tuple(scores),
                     multiplier, gvf_cutoff, k_max)


@dataclass(frozen=True)
class RankedProcess:
    node: NodeRef
    loss: float
    rank: int


@dataclass(frozen=True)
class AnomalyReport:
    graph_id: str
    score: float
    threshold: float
    verdict: str
    processes: tuple[RankedProcess, ...] = field(default=())

    @property
    def abnormal(self) -> bool:
        return self.verdict == ABNORMAL

    @property
    def losses(self) -> dict[NodeRef, float]:
        return {p.node: p.loss for p in self.processes}

    def top(self, n: int) -> list[NodeRef]:
        return [p.node for p in self.processes[:n]]

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "score": self.score,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "processes": [
                {"base_id": p.node.base_id, "version": p.node.version,
                 "name": p.node.name, "loss": p.loss, "rank": p.rank}
                for p in self.processes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False)

    def table(self, top: int | None = None) -> str:
        rows = self.processes if top is None else self.processes[:top]
        lines = [f"graph {self.graph_id}: {self.verdict} "
                 f"(score {self.score:.6g}, threshold {self.threshold:.6g})",
                 f"{'rank':>4}  {'loss':>12}  process"]
        for p in rows:
            lines.append(f"{p.rank:>4}  {p.loss:>12.6g}  {p.node.name} "
                         f"[{p.node.base_id} v{p.node.version}]")
        return "\n".join(lines)


def rank_processes(losses: Mapping[NodeRef, float]) -> list[RankedProcess]:
    order = sorted(losses, key=lambda n: (-losses[n], n.base_id, n.version))
    return [RankedProcess(n, float(losses[n]), r) for r, n in enumerate(order, start=1)]


def classify_and_rank(losses: Mapping[NodeRef, float], threshold: Threshold,
                      graph_id: str = "") -> AnomalyReport:
    if not losses:
        raise ValueError("no process losses to classify")
    score = max_zone_avg(list(losses.values()), threshold.gvf_cutoff, threshold.k_max)
    verdict = ABNORMAL if score > threshold.value else BENIGN
    return AnomalyReport(graph_id, float(score), float(threshold.value), verdict,
                         tuple(rank_processes(losses)))
