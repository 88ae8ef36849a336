"""End-to-end training, detection and evaluation over trace corpora."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autoencoder as ae
from .audit import AuditEvent, read_events
from .detect import AnomalyReport, Threshold, classify_and_rank, compute_threshold
from .featurize import AlaCarteTransform, Featurizer
from .graph import DEFAULT_SERVICES, SIG, NodeRef, build_sig
from .skipgram import Vocabulary

log = logging.getLogger(__name__)

BUNDLE_FORMAT = 1
BUNDLE_FILES = ("config.ini", "vocab.json", "alacarte.json", "model.bin", "threshold.json")


class InsufficientData(ValueError):
    pass


class BundleVersionMismatch(ValueError):
    pass


class MissingLabels(ValueError):
    pass


@dataclass
class PipelineConfig:
    # embedding
    dim: int = 128
    window: int = 5
    walks: int = 10
    walk_length: int = 10
    negatives: int = 5
    embedding_epochs: int = 20
    embedding_lr: float = 0.025
    alacarte_lambda: float = 1e-2
    # model
    hidden: int = 64
    learning_rate: float = 2e-3
    epochs: int = 100
    batch_size: int = 25
    # detector
    threshold_multiplier: float = 3.0
    k_max: int = 5
    gvf_cutoff: float = 0.9
    # builder
    time_bound: float = 300.0
    services: tuple[str, ...] = DEFAULT_SERVICES
    # split
    train_ratio: float = 0.7
    validation_ratio: float = 0.1
    test_ratio: float = 0.2
    seed: int = 0

    SECTIONS = {
        "embedding": ("dim", "window", "walks", "walk_length", "negatives",
                      "embedding_epochs", "embedding_lr", "alacarte_lambda"),
        "model": ("hidden", "learning_rate", "epochs", "batch_size"),
        "detector": ("threshold_multiplier", "k_max", "gvf_cutoff"),
        "builder": ("time_bound", "services"),
        "split": ("train_ratio", "validation_ratio", "test_ratio"),
        "pipeline": ("seed",),
    }

    def __post_init__(self):
        self.services = tuple(self.services)
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("services", "seed"):
                continue
            if f.name in ("train_ratio", "validation_ratio", "test_ratio"):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.train_ratio + self.validation_ratio + self.test_ratio > 1 + 1e-9:
            raise ValueError("split ratios sum to more than 1")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, keys in self.SECTIONS.items():
            parser[section] = {}
            for k in keys:
                v = getattr(self, k)
                parser[section][k] = ",".join(v) if k == "services" else repr(v)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        base = base or cls()
        types = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(cls)}
        unknown = set(parser.sections()) - set(cls.SECTIONS)
        if unknown:
            raise ValueError(f"unknown section {sorted(unknown)[0]}")
        values = {}
        for section, keys in cls.SECTIONS.items():
            if not parser.has_section(section):
                continue
            for k, raw in parser[section].items():
                if k not in keys:
                    raise ValueError(f"unknown option {section}.{k}")
                if k == "services":
                    values[k] = tuple(s.strip().lower() for s in raw.split(",") if s.strip())
                else:
                    values[k] = types[k](float(raw)) if types[k] is int else types[k](raw)
        return dataclasses.replace(base, **values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# corpora

@dataclass
class LabeledTrace:
    name: str
    events: list[AuditEvent]
    sidecar: dict | None = None

    @property
    def malicious(self) -> bool:
        return bool(self.sidecar) and self.sidecar.get("label") == "malicious"


def load_trace(path) -> LabeledTrace:
    path = Path(path)
    stem = path.name[:-len(".jsonl")] if path.name.endswith(".jsonl") else path.stem
    label_path = path.with_name(stem + ".labels.json")
    sidecar = json.loads(label_path.read_text(encoding="utf-8")) if label_path.exists() else None
    return LabeledTrace(stem, read_events(path), sidecar)


def load_corpus(directory) -> list[LabeledTrace]:
    paths = sorted(Path(directory).glob("*.jsonl"))
    return [load_trace(p) for p in paths]


def trace_graph(events: Sequence[AuditEvent], config: PipelineConfig,
                targets: Iterable[str] | None = None) -> SIG:
    if not events:
        raise InsufficientData("trace has no events")
    return build_sig(events, targets, config.time_bound, config.services)


def split_indices(n: int, config: PipelineConfig) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle into train / validation / held-out test indices."""
    order = [int(i) for i in np.random.default_rng(config.seed).permutation(n)]
    # the threshold needs two validation graphs, so small corpora get at least two
    n_val = min(max(0, n - 1), max(2, int(round(n * config.validation_ratio))))
    n_train = int(round(n * config.train_ratio))
    n_train = min(n_train, n - n_val)
    n_test = min(int(round(n * config.test_ratio)), n - n_train - n_val)
    return (order[:n_train], order[n_train:n_train + n_val],
            order[n_train + n_val:n_train + n_val + n_test])


# ---------------------------------------------------------------------------
# bundle

@dataclass
class Bundle:
    config: PipelineConfig
    featurizer: Featurizer
    model: ae.AutoencoderModel
    threshold: Threshold
    splits: dict = field(default_factory=dict)

    def embed(self, sig: SIG) -> dict[NodeRef, np.ndarray]:
        return self.featurizer.embed_graph(sig)

    def score_graph(self, sig: SIG, graph_id: str = "",
                    multiplier: float | None = None) -> AnomalyReport:
        losses = ae.node_losses(self.model, sig, self.embed(sig))
        if not losses:
            raise InsufficientData("graph has no process nodes")
        threshold = self.threshold
        if multiplier is not None and multiplier != threshold.multiplier:
            threshold = threshold.with_multiplier(multiplier)
        return classify_and_rank(losses, threshold, graph_id)

    def detect(self, events: Sequence[AuditEvent], targets: Iterable[str] | None = None,
               graph_id: str = "", multiplier: float | None = None) -> tuple[AnomalyReport, SIG]:
        sig = trace_graph(events, self.config, targets)
        return self.score_graph(sig, graph_id, multiplier), sig

    def artifacts(self) -> dict[str, bytes]:
        return {
            "config.ini": self.config.to_ini().encode("utf-8"),
            "vocab.json": self.featurizer.vocab.to_json().encode("utf-8"),
            "alacarte.json": json.dumps({
                "transform": json.loads(self.featurizer.transform.to_json()),
                "walks_per_node": self.featurizer.walks_per_node,
                "walk_length": self.featurizer.walk_length,
                "seed": self.featurizer.seed,
            }, sort_keys=True).encode("utf-8"),
            "model.bin": self.model.to_bytes(),
            "threshold.json": json.dumps(self.threshold.to_dict(), sort_keys=True).encode("utf-8"),
        }

    def manifest(self) -> dict:
        files = self.artifacts()
        return {
            "format": BUNDLE_FORMAT,
            "files": {k: hashlib.sha256(v).hexdigest() for k, v in sorted(files.items())},
            "splits": self.splits,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, data in self.artifacts().items():
            (directory / name).write_bytes(data)
        (directory / "manifest.json").write_text(
            json.dumps(self.manifest(), indent=1, sort_keys=True), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory) -> "Bundle":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise BundleVersionMismatch(f"{directory} has no manifest")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format") != BUNDLE_FORMAT:
            raise BundleVersionMismatch(
                f"bundle format {manifest.get('format')} != supported {BUNDLE_FORMAT}")
        blobs = {}
        for name in BUNDLE_FILES:
            data = (directory / name).read_bytes()
            if hashlib.sha256(data).hexdigest() != manifest["files"].get(name):
                raise BundleVersionMismatch(f"{name} does not match the manifest hash")
            blobs[name] = data
        config = PipelineConfig.from_ini(blobs["config.ini"].decode("utf-8"))
        vocab = Vocabulary.from_json(blobs["vocab.json"].decode("utf-8"))
        ac = json.loads(blobs["alacarte.json"])
        transform = AlaCarteTransform.from_json(json.dumps(ac["transform"]))
        featurizer = Featurizer(vocab, transform, ac["walks_per_node"], ac["walk_length"], ac["seed"])
        model = ae.AutoencoderModel.from_bytes(blobs["model.bin"])
        threshold = Threshold.from_dict(json.loads(blobs["threshold.json"]))
        return cls(config, featurizer, model, threshold, manifest.get("splits", {}))


def train_bundle(traces: Sequence[LabeledTrace], config: PipelineConfig | None = None,
                 split: tuple[Sequence[int], Sequence[int]] | None = None) -> Bundle:
    """Featurize, train and set the threshold from benign traces.

    ``split`` may give explicit (train, validation) index lists; otherwise
    the config ratios decide with a seeded shuffle.
    """
    config = config or PipelineConfig()
    if split is None:
        if len(traces) < 5:
            raise InsufficientData(f"need at least 5 benign traces, got {len(traces)}")
        train_idx, val_idx, test_idx = split_indices(len(traces), config)
    else:
        train_idx, val_idx = [list(s) for s in split]
        test_idx = []
    if len(val_idx) < 2 or not train_idx:
        raise InsufficientData("split leaves fewer than 2 validation graphs or no training graphs")
    sigs = {}
    for i in list(train_idx) + list(val_idx):
        sigs[i] = trace_graph(traces[i].events, config)
    train_sigs = [sigs[i] for i in train_idx]
    val_sigs = [sigs[i] for i in val_idx]
    log.info("featurizing %d training graphs", len(train_sigs))
    featurizer = Featurizer.fit(
        train_sigs, dim=config.dim, window=config.window, walks_per_node=config.walks,
        walk_length=config.walk_length, negatives=config.negatives,
        epochs=config.embedding_epochs, seed=config.seed, lam=config.alacarte_lambda,
        learning_rate=config.embedding_lr)
    train_data = [(s, featurizer.embed_graph(s)) for s in train_sigs]
    val_data = [(s, featurizer.embed_graph(s)) for s in val_sigs]
    model = ae.init_model(config.dim, config.hidden, seed=config.seed)
    log.info("training autoencoder for %d epochs", config.epochs)
    result = ae.train(model, train_data, epochs=config.epochs, batch_size=config.batch_size,
                      learning_rate=config.learning_rate, seed=config.seed, validation=val_data)
    val_losses = ae.batch_node_losses(result.model, [ae.compile_graph(s, e) for s, e in val_data])
    threshold = compute_threshold([list(l) for l in val_losses], config.threshold_multiplier,
                                  config.gvf_cutoff, config.k_max)
    splits = {
        "train": [traces[i].name for i in train_idx],
        "validation": [traces[i].name for i in val_idx],
        "test": [traces[i].name for i in test_idx],
    }
    return Bundle(config, featurizer, result.model, threshold, splits)


# ---------------------------------------------------------------------------
# evaluation

def roc_auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Area under the ROC curve traced by sweeping a threshold over ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos, neg = labels.sum(), (~labels).sum()
    if pos == 0 or neg == 0:
        return float("nan")
    tpr, fpr = [0.0], [0.0]
    for t in np.unique(scores)[::-1]:
        flagged = scores >= t
        tpr.append((flagged & labels).sum() / pos)
        fpr.append((flagged & ~labels).sum() / neg)
    return float(np.trapezoid(tpr, fpr))


def hop_distances(sig: SIG, sources: Iterable[NodeRef]) -> dict[NodeRef, int]:
    """Undirected BFS distance from the nearest source node."""
    adj: dict[NodeRef, list[NodeRef]] = {n: [] for n in sig.nodes}
    for e in sig.edges:
        adj[e.src].append(e.dst)
        adj[e.dst].append(e.src)
    dist = {s: 0 for s in sources if s in adj}
    queue = deque(dist)
    while queue:
        n = queue.popleft()
        for m in adj[n]:
            if m not in dist:
                dist[m] = dist[n] + 1
                queue.append(m)
    return dist


def guidance_tier(report: AnomalyReport, sig: SIG, malicious_ids: Iterable[str]) -> str:
    """'targeted', 'improved', 'basic' or 'none'.

    targeted: a labeled node in the top 5, or one hop from a top-5 process;
    improved: a top-5 process within 3 hops; basic: a top-10 process within
    3 hops.
    """
    bad = set(malicious_ids)
    targets = [n for n in sig.nodes if n.base_id in bad]
    if not targets:
        return "none"
    dist = hop_distances(sig, targets)
    top5 = [dist.get(n, np.inf) for n in report.top(5)]
    top10 = [dist.get(n, np.inf) for n in report.top(10)]
    if any(d <= 1 for d in top5):
        return "targeted"
    if any(d <= 3 for d in top5):
        return "improved"
    if any(d <= 3 for d in top10):
        return "basic"
    return "none"


@dataclass
class EvalResult:
    metrics: dict
    reports: list[tuple[LabeledTrace, AnomalyReport, SIG]]

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "graphs": [
                {"trace": t.name, "label": "malicious" if t.malicious else "benign",
                 "score": r.score, "verdict": r.verdict,
                 "guidance": g}
                for (t, r, s), g in zip(self.reports, self.metrics["guidance_per_graph"])
            ],
        }


def classification_metrics(predicted: Sequence[bool], actual: Sequence[bool]) -> dict:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int((~predicted & ~actual).sum())
    no_pred = tp + fp == 0
    no_pos = tp + fn == 0
    precision = 1.0 if no_pred else tp / (tp + fp)
    recall = 1.0 if no_pos else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "precision": precision, "recall": recall,
            "accuracy": (tp + tn) / max(1, len(actual)), "f1": f1,
            "fpr": fp / (fp + tn) if fp + tn else 0.0,
            "zero_predicted_positives": no_pred, "zero_actual_positives": no_pos}


def evaluate(bundle: Bundle, corpus: Sequence[LabeledTrace],
             multiplier: float | None = None) -> EvalResult:
    """Per-graph detection metrics, ROC AUC and guidance tiers."""
    missing = [t.name for t in corpus if t.sidecar is None]
    if missing:
        raise MissingLabels(f"no label sidecar for {missing}")
    reports = []
    for t in corpus:
        report, sig = bundle.detect(t.events, graph_id=t.name, multiplier=multiplier)
        reports.append((t, report, sig))
    actual = [t.malicious for t, _, _ in reports]
    predicted = [r.abnormal for _, r, _ in reports]
    metrics = classification_metrics(predicted, actual)
    metrics["auc"] = roc_auc([r.score for _, r, _ in reports], actual)
    tiers = []
    for t, r, s in reports:
        tiers.append(guidance_tier(r, s, t.sidecar.get("malicious_processes", []))
                     if t.malicious and r.abnormal else None)
    counts = {k: sum(1 for g in tiers if g == k) for k in ("targeted", "improved", "basic", "none")}
    metrics["guidance"] = counts
    metrics["guidance_per_graph"] = tiers
    return EvalResult(metrics, reports)
