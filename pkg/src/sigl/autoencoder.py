"""Graph-LSTM encoder with an MLP decoder, trained to reconstruct node embeddings.

Cell for node j with predecessors i (edge type m = m(i, j))::

    s_g   = sum_i U_g[m] h_i                      for g in {i, o, u}
    i_j   = sigmoid(W_i x_j + s_i + b_i)
    o_j   = sigmoid(W_o x_j + s_o + b_o)
    u_j   = tanh(W_u x_j + s_u + b_u)
    f_ij  = sigmoid(W_f x_j + U_f[m] h_i + b_f)   one forget gate per edge
    c_j   = i_j * u_j + sum_i f_ij * c_i
    h_j   = o_j * tanh(c_j)

The decoder is ``D2 relu(D1 h + c1) + c2`` and the per-node loss is the mean
squared error against the node's embedding.  Nodes are evaluated level by
level (all nodes whose predecessors are done), so a batch of graphs is just
one disjoint union.  Gradients are derived by hand.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .audit import EntityKind
from .graph import EDGE_TYPE_COUNT, SIG, EdgeType, NodeRef, topological_order

FORMAT_VERSION = 1
MAGIC = b"SIGLAE\x00\x01"

# gate blocks inside the stacked 4H dimension
GATE_I, GATE_F, GATE_O, GATE_U = range(4)
PARAM_NAMES = ("W", "U", "b", "D1", "c1", "D2", "c2")


class MissingEmbedding(KeyError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class ModelFormatError(ValueError):
    pass


@dataclass
class AutoencoderModel:
    input_dim: int
    hidden_dim: int
    edge_types: int
    params: dict[str, np.ndarray]
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return param_shapes(self.input_dim, self.hidden_dim, self.edge_types)

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(self.input_dim, self.hidden_dim, self.edge_types,
                                {k: v.copy() for k, v in self.params.items()},
                                self.seed, json.loads(json.dumps(self.metadata)))

    def gate(self, name: str, gate: int) -> np.ndarray:
        """Slice of a stacked tensor for one gate (0=i, 1=f, 2=o, 3=u)."""
        H = self.hidden_dim
        p = self.params[name]
        if name == "U":
            return p[:, gate * H:(gate + 1) * H, :]
        return p[gate * H:(gate + 1) * H]

    def to_bytes(self) -> bytes:
        header = {
            "format_version": FORMAT_VERSION,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "edge_types": {t.label: int(t) for t in EdgeType}
            if self.edge_types == EDGE_TYPE_COUNT else self.edge_types,
            "edge_type_count": self.edge_types,
            "seed": self.seed,
            "metadata": self.metadata,
            "tensors": [{"name": k, "shape": list(self.params[k].shape)} for k in PARAM_NAMES],
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<Q", len(head)))
        buf.write(head)
        for k in PARAM_NAMES:
            buf.write(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AutoencoderModel":
        if data[:len(MAGIC)] != MAGIC:
            raise ModelFormatError("not a model file")
        (n,) = struct.unpack_from("<Q", data, len(MAGIC))
        start = len(MAGIC) + 8
        header = json.loads(data[start:start + n].decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {header.get('format_version')}")
        d, H, M = header["input_dim"], header["hidden_dim"], header["edge_type_count"]
        expected = param_shapes(d, H, M)
        offset = start + n
        params = {}
        for spec in header["tensors"]:
            name, shape = spec["name"], tuple(spec["shape"])
            if expected.get(name) != shape:
                raise ModelFormatError(f"tensor {name} has shape {shape}, expected {expected.get(name)}")
            size = int(np.prod(shape)) * 8
            if offset + size > len(data):
                raise ModelFormatError("truncated model file")
            params[name] = np.frombuffer(data, dtype="<f8", count=size // 8,
                                         offset=offset).astype(np.float64).reshape(shape)
            offset += size
        if set(params) != set(PARAM_NAMES):
            raise ModelFormatError("model file is missing tensors")
        if offset != len(data):
            raise ModelFormatError("trailing bytes in model file")
        return cls(d, H, M, params, header["seed"], header["metadata"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def param_shapes(d: int, H: int, M: int) -> dict[str, tuple[int, ...]]:
    return {"W": (4 * H, d), "U": (M, 4 * H, H), "b": (4 * H,),
            "D1": (H, H), "c1": (H,), "D2": (d, H), "c2": (d,)}


def init_model(d: int = 128, H: int = 64, edge_type_count: int = EDGE_TYPE_COUNT,
               seed: int = 0) -> AutoencoderModel:
    if d < 1 or H < 1 or edge_type_count < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(H)
    params = {}
    for name, shape in param_shapes(d, H, edge_type_count).items():
        if name in ("b", "c1", "c2"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape)
    params["b"][GATE_F * H:(GATE_F + 1) * H] = 1.0
    return AutoencoderModel(d, H, edge_type_count, params, seed)


# ---------------------------------------------------------------------------
# compiled graphs

@dataclass
class GraphPlan:
    """Array form of one SIG (or a disjoint union of several)."""

    nodes: list[NodeRef]
    x: np.ndarray
    proc: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    level: np.ndarray
    graph_of: np.ndarray

    @property
    def levels(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(node indices, incoming edge indices) for every level, in order."""
        out = []
        if len(self.nodes) == 0:
            return out
        node_order = np.argsort(self.level, kind="stable")
        node_bounds = np.searchsorted(self.level[node_order], np.arange(self.level.max() + 2))
        edge_level = self.level[self.dst]
        edge_order = np.argsort(edge_level, kind="stable")
        edge_bounds = np.searchsorted(edge_level[edge_order], np.arange(self.level.max() + 2))
        for L in range(self.level.max() + 1):
            out.append((node_order[node_bounds[L]:node_bounds[L + 1]],
                        edge_order[edge_bounds[L]:edge_bounds[L + 1]]))
        return out


def compile_graph(sig: SIG, embeddings: Mapping[NodeRef, np.ndarray],
                  order: Sequence[NodeRef] | None = None) -> GraphPlan:
    if order is None:
        order = topological_order(sig)
    order = list(order)
    index = {n: i for i, n in enumerate(order)}
    missing = [n for n in order if n not in embeddings]
    if missing:
        raise MissingEmbedding(f"no embedding for node {missing[0]!r}")
    x = np.array([embeddings[n] for n in order], dtype=np.float64)
    if len(order) == 0:
        x = x.reshape(0, 0)
    # predecessors are summed in a canonical order independent of `order`
    edges = sorted(sig.edges, key=lambda e: (index[e.dst], e.src.base_id, e.src.version,
                                             int(e.etype), e.timestamp))
    src = np.array([index[e.src] for e in edges], dtype=np.int64)
    dst = np.array([index[e.dst] for e in edges], dtype=np.int64)
    etype = np.array([int(e.etype) for e in edges], dtype=np.int64)
    level = np.zeros(len(order), dtype=np.int64)
    for s, t in zip(src, dst):  # edges are grouped by dst in topological order
        if s >= t:
            raise ValueError("order is not topological")
        level[t] = max(level[t], level[s] + 1)
    proc = np.array([i for i, n in enumerate(order) if n.kind is EntityKind.PROCESS],
                    dtype=np.int64)
    return GraphPlan(order, x, proc, src, dst, etype, level,
                     np.zeros(len(order), dtype=np.int64))


def union_plans(plans: Sequence[GraphPlan]) -> GraphPlan:
    if len(plans) == 1:
        return plans[0]
    offsets = np.cumsum([0] + [len(p.nodes) for p in plans])
    nodes = [n for p in plans for n in p.nodes]
    dims = {p.x.shape[1] for p in plans if len(p.nodes)}
    d = dims.pop() if dims else 0
    x = np.concatenate([p.x.reshape(-1, d) for p in plans]) if nodes else np.zeros((0, d))
    return GraphPlan(
        nodes, x,
        np.concatenate([p.proc + o for p, o in zip(plans, offsets)]),
        np.concatenate([p.src + o for p, o in zip(plans, offsets)]),
        np.concatenate([p.dst + o for p, o in zip(plans, offsets)]),
        np.concatenate([p.etype for p in plans]),
        np.concatenate([p.level for p in plans]),
        np.concatenate([np.full(len(p.nodes), g) for g, p in enumerate(plans)]).astype(np.int64),
    )


# ---------------------------------------------------------------------------
# forward / backward

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(params: Mapping[str, np.ndarray], plan: GraphPlan, H: int):
    W, U, b = params["W"], params["U"], params["b"]
    n = len(plan.nodes)
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    Z = plan.x @ W.T + b if n else np.zeros((0, 4 * H))
    sI, sF, sO, sU = (slice(g * H, (g + 1) * H) for g in range(4))
    caches = []
    local_pos = np.zeros(n, dtype=np.int64)
    for J, E in plan.levels:
        z = Z[J].copy()
        fc = np.zeros((len(J), H))
        cache = {"J": J, "E": E}
        if len(E):
            local_pos[J] = np.arange(len(J))
            src, dst, et = plan.src[E], plan.dst[E], plan.etype[E]
            local = local_pos[dst]
            hs = h[src]
            uh = np.empty((len(E), 4 * H))
            for m in np.unique(et):
                mask = et == m
                uh[mask] = hs[mask] @ U[m].T
            agg = np.zeros((len(J), 4 * H))
            np.add.at(agg, local, uh)
            z[:, sI] += agg[:, sI]
            z[:, sO] += agg[:, sO]
            z[:, sU] += agg[:, sU]
            f_e = _sigmoid(Z[dst, sF] + uh[:, sF])
            np.add.at(fc, local, f_e * c[src])
            cache.update(local=local, f_e=f_e)
        ig = _sigmoid(z[:, sI])
        og = _sigmoid(z[:, sO])
        ug = np.tanh(z[:, sU])
        cJ = ig * ug + fc
        tc = np.tanh(cJ)
        c[J] = cJ
        h[J] = og * tc
        cache.update(i=ig, o=og, u=ug, tc=tc)
        caches.append(cache)
    return h, c, caches


def _decode(params, hp):
    pre = hp @ params["D1"].T + params["c1"]
    act = np.maximum(pre, 0.0)
    y = act @ params["D2"].T + params["c2"]
    return pre, act, y


def _loss_and_grads(params: Mapping[str, np.ndarray], plan: GraphPlan, H: int,
                    need_grads: bool = True):
    """Mean per-node loss over the plan's process nodes, node losses, grads."""
    h, c, caches = _forward(params, plan, H)
    P = plan.proc
    d = plan.x.shape[1] if plan.x.ndim == 2 else 0
    if len(P) == 0:
        grads = {k: np.zeros_like(v) for k, v in params.items()} if need_grads else None
        return 0.0, np.zeros(0), grads
    pre, act, y = _decode(params, h[P])
    diff = y - plan.x[P]
    node_loss = np.mean(diff * diff, axis=1)
    loss = float(node_loss.mean())
    if not need_grads:
        return loss, node_loss, None

    W, U = params["W"], params["U"]
    sI, sF, sO, sU = (slice(g * H, (g + 1) * H) for g in range(4))
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dy = 2.0 * diff / (d * len(P))
    grads["D2"] = dy.T @ act
    grads["c2"] = dy.sum(axis=0)
    dpre = (dy @ params["D2"]) * (pre > 0)
    grads["D1"] = dpre.T @ h[P]
    grads["c1"] = dpre.sum(axis=0)
    n = len(plan.nodes)
    dh = np.zeros((n, H))
    dc = np.zeros((n, H))
    np.add.at(dh, P, dpre @ params["D1"])
    dZ = np.zeros((n, 4 * H))
    dU = grads["U"]
    for cache in reversed(caches):
        J, E = cache["J"], cache["E"]
        ig, og, ug, tc = cache["i"], cache["o"], cache["u"], cache["tc"]
        dhJ = dh[J]
        dcJ = dc[J] + dhJ * og * (1.0 - tc * tc)
        dz = np.zeros((len(J), 4 * H))
        dz[:, sI] = dcJ * ug * ig * (1.0 - ig)
        dz[:, sO] = dhJ * tc * og * (1.0 - og)
        dz[:, sU] = dcJ * ig * (1.0 - ug * ug)
        if len(E):
            local, f_e = cache["local"], cache["f_e"]
            src, et = plan.src[E], plan.etype[E]
            dc_dst = dcJ[local]
            dzf = dc_dst * c[src] * f_e * (1.0 - f_e)
            np.add.at(dc, src, dc_dst * f_e)
            dzf_node = np.zeros((len(J), H))
            np.add.at(dzf_node, local, dzf)
            dz[:, sF] = dzf_node
            g_e = dz[local]
            g_e[:, sF] = dzf
            hs = h[src]
            for m in np.unique(et):
                mask = et == m
                dU[m] += g_e[mask].T @ hs[mask]
                np.add.at(dh, src[mask], g_e[mask] @ U[m])
        dZ[J] = dz
    grads["W"] = dZ.T @ plan.x
    grads["b"] = dZ.sum(axis=0)
    return loss, node_loss, grads


# ---------------------------------------------------------------------------
# public API

def encode(model: AutoencoderModel, sig: SIG, embeddings: Mapping[NodeRef, np.ndarray],
           order: Sequence[NodeRef] | None = None) -> dict[NodeRef, tuple[np.ndarray, np.ndarray]]:
    plan = compile_graph(sig, embeddings, order)
    h, c, _ = _forward(model.params, plan, model.hidden_dim)
    return {n: (h[i], c[i]) for i, n in enumerate(plan.nodes)}


def decode(model: AutoencoderModel, h: np.ndarray) -> np.ndarray:
    return _decode(model.params, np.atleast_2d(h))[2].reshape(
        (model.input_dim,) if np.ndim(h) == 1 else (-1, model.input_dim))


def node_losses(model: AutoencoderModel, sig: SIG,
                embeddings: Mapping[NodeRef, np.ndarray]) -> dict[NodeRef, float]:
    """Reconstruction loss of every process node (all versions)."""
    plan = compile_graph(sig, embeddings)
    _, losses, _ = _loss_and_grads(model.params, plan, model.hidden_dim, need_grads=False)
    return {plan.nodes[i]: float(l) for i, l in zip(plan.proc, losses)}


def batch_node_losses(model: AutoencoderModel, plans: Sequence[GraphPlan]) -> list[np.ndarray]:
    """Per-graph arrays of process-node losses, evaluated as one union."""
    if not plans:
        return []
    plan = union_plans(plans)
    _, losses, _ = _loss_and_grads(model.params, plan, model.hidden_dim, need_grads=False)
    owner = plan.graph_of[plan.proc]
    return [losses[owner == g] for g in range(len(plans))]


def loss_and_grads(model: AutoencoderModel, sig: SIG,
                   embeddings: Mapping[NodeRef, np.ndarray]):
    plan = compile_graph(sig, embeddings)
    loss, _, grads = _loss_and_grads(model.params, plan, model.hidden_dim)
    return loss, grads


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


@dataclass
class TrainResult:
    model: AutoencoderModel
    train_loss: list[float]
    validation_loss: list[float]
    best_epoch: int | None


def _mean_loss(model_params, plans, H) -> float:
    plan = union_plans(plans)
    _, losses, _ = _loss_and_grads(model_params, plan, H, need_grads=False)
    return float(losses.mean()) if len(losses) else 0.0


def train(model: AutoencoderModel,
          graphs: Sequence[tuple[SIG, Mapping[NodeRef, np.ndarray]]],
          epochs: int = 100, batch_size: int = 25, learning_rate: float = 1e-3,
          seed: int = 0,
          validation: Sequence[tuple[SIG, Mapping[NodeRef, np.ndarray]]] | None = None,
          ) -> TrainResult:
    """Adam on the mean process-node loss of each batch of graphs.

    With a validation set the returned model holds the parameters of the
    epoch with the lowest mean validation loss; otherwise the last epoch.
    The input model is not modified.
    """
    if not graphs:
        raise ValueError("no training graphs")
    model = model.copy()
    H = model.hidden_dim
    plans = [compile_graph(s, e) for s, e in graphs]
    val_plans = [compile_graph(s, e) for s, e in validation] if validation else []
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=learning_rate)
    train_curve, val_curve = [], []
    best = (np.inf, None, None)
    for epoch in range(epochs):
        order = rng.permutation(len(plans))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = union_plans([plans[i] for i in order[start:start + batch_size]])
            loss, node_loss, grads = _loss_and_grads(model.params, batch, H)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch)
            total += float(node_loss.sum())
            count += len(node_loss)
            if len(node_loss):
                opt.step(model.params, grads)
        train_curve.append(total / count if count else 0.0)
        if val_plans:
            v = _mean_loss(model.params, val_plans, H)
            if not np.isfinite(v):
                raise NonFiniteLoss(epoch)
            val_curve.append(v)
            if v < best[0]:
                best = (v, epoch, {k: p.copy() for k, p in model.params.items()})
    best_epoch = None
    if best[2] is not None:
        model.params = best[2]
        best_epoch = best[1]
    model.metadata.update({
        "epochs": epochs, "batch_size": batch_size, "learning_rate": learning_rate,
        "train_seed": seed, "train_loss": train_curve, "validation_loss": val_curve,
        "best_epoch": best_epoch,
    })
    return TrainResult(model, train_curve, val_curve, best_epoch)


def grad_check(model: AutoencoderModel, sig: SIG, embeddings: Mapping[NodeRef, np.ndarray],
               samples: int = 20, eps: float = 1e-5, seed: int = 0,
               corrupt: Callable[[dict], None] | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``samples`` random entries are checked in every tensor (all entries if the
    tensor is smaller).  An entry where both gradients are exactly zero counts
    as error 0.  ``corrupt`` may tamper with the analytic gradients in place;
    it exists to test the harness itself.
    """
    plan = compile_graph(sig, embeddings)
    H = model.hidden_dim
    params = {k: v.copy() for k, v in model.params.items()}
    _, _, grads = _loss_and_grads(params, plan, H)
    if corrupt is not None:
        corrupt(grads)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in PARAM_NAMES:
        p = params[name]
        flat = p.reshape(-1)
        picks = (np.arange(flat.size) if flat.size <= samples
                 else rng.choice(flat.size, size=samples, replace=False))
        for k in picks:
            old = flat[k]
            flat[k] = old + eps
            up = _loss_and_grads(params, plan, H, need_grads=False)[0]
            flat[k] = old - eps
            down = _loss_and_grads(params, plan, H, need_grads=False)[0]
            flat[k] = old
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].reshape(-1)[k]
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    """|a - b| / max(|a|, |b|, floor); zero when both sides are zero."""
    if a == 0.0 and b == 0.0:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), floor)
