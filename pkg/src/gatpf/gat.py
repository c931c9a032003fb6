"""Graph attention network mapping bus voltages to conjugate current injections.

Each layer applies one shared linear map ``W`` and one attention vector ``a``
to every node, so real-part and imaginary-part nodes share all weights. The
last layer emits one scalar per node: real-part nodes are read as the real
component of the conjugate current, imaginary-part nodes as its imaginary
component. A fixed physics head then turns currents into (P, Q).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import TRAIN, VAL, Dataset
from .errors import DimensionMismatch, EmptyInput
from .graph import GraphBatch, VoltGraph, graph_from_edges, make_batch
from .powerflow import conjugate_currents, recover_power
from .training import LossTarget, TrainConfig, fit, power_loss

log = logging.getLogger(__name__)


class Activation(enum.Enum):
    ELU = "elu"
    IDENTITY = "identity"


@dataclass
class GatLayerParams:
    W: np.ndarray           # (d_out, d_in)
    a: np.ndarray           # (2 * d_out,): [self half | neighbour half]
    leaky_slope: float = 0.2
    activation: Activation = Activation.ELU
    bias: np.ndarray | None = None  # (d_out,), added after aggregation

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.bias = np.zeros(self.d_out) if self.bias is None else np.asarray(self.bias, dtype=float).ravel()
        if self.bias.shape != (self.d_out,):
            raise DimensionMismatch(f"bias must have length {self.d_out}, got {self.bias.shape}")
        self.activation = Activation(self.activation)
        if self.a.shape != (2 * self.d_out,):
            raise DimensionMismatch(f"attention vector must have length {2 * self.d_out}, got {self.a.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.a))):
            raise ValueError("layer parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]


@dataclass
class GatModel:
    layers: list[GatLayerParams]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        if self.layers[0].d_in != 1 or self.layers[-1].d_out != 1:
            raise DimensionMismatch("model input and output width must both be 1")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise DimensionMismatch(f"layer widths do not chain: {prev.d_out} -> {nxt.d_in}")
        if self.layers[-1].activation != Activation.IDENTITY:
            raise ValueError("final layer must use the identity activation")

    @classmethod
    def init(cls, n_layers: int = 3, hidden: int = 32, seed: int = 0, leaky_slope: float = 0.2) -> GatModel:
        """Glorot-uniform ``W``, zero ``a``."""
        rng = np.random.default_rng(seed)
        dims = [1] + [hidden] * (n_layers - 1) + [1]
        layers = []
        for k, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            lim = np.sqrt(6.0 / (d_in + d_out))
            last = k == n_layers - 1
            layers.append(GatLayerParams(
                W=rng.uniform(-lim, lim, size=(d_out, d_in)), a=np.zeros(2 * d_out), leaky_slope=leaky_slope,
                activation=Activation.IDENTITY if last else Activation.ELU,
            ))
        return cls(layers, {"init_seed": seed})

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.a, layer.bias]
        return out

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        for k, layer in enumerate(self.layers):
            layer.W = np.array(arrays[3 * k], dtype=float).reshape(layer.W.shape)
            layer.a = np.array(arrays[3 * k + 1], dtype=float).reshape(layer.a.shape)
            layer.bias = np.array(arrays[3 * k + 2], dtype=float).reshape(layer.bias.shape)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


# --------------------------------------------------------------------------
# forward pass (shared by numpy evaluation and training)

def _structure(graph):
    if isinstance(graph, GraphBatch):
        return graph.n_nodes, graph.dst, graph.src
    d, s = graph.directed
    return graph.n_nodes, d, s


def _layer(H, W, a, bias, slope, activation, n_nodes, dst, src):
    d_out = W.shape[0]
    Z = ad.matmul(H, _transpose(W))
    s_self = ad.matmul(Z, ad.take(a, np.arange(d_out)))
    s_nbr = ad.matmul(Z, ad.take(a, np.arange(d_out, 2 * d_out)))
    logits = ad.leaky_relu(ad.take(s_self, dst) + ad.take(s_nbr, src), slope)
    alpha = ad.segment_softmax(logits, dst, n_nodes)
    msg = ad.take(Z, src) * ad.reshape(alpha, (-1, 1))
    out = ad.segment_sum(msg, dst, n_nodes) + bias
    if Activation(activation) == Activation.ELU:
        out = ad.elu(out)
    return out, alpha


def _transpose(W):
    out = ad.Tensor(W.data.T, (W,))
    out.backward_fn = lambda g: ad._accum(W, g.T)
    return out


def _features(graph, H):
    n_nodes, dst, src = _structure(graph)
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != n_nodes:
        raise DimensionMismatch(f"graph has {n_nodes} nodes, feature matrix has {H.shape[0]} rows")
    return H, n_nodes, dst, src


@dataclass(frozen=True)
class AttentionCoefficients:
    """Coefficients over ``N_i`` plus ``i`` as flat arrays sorted by ``dst``."""

    dst: np.ndarray
    src: np.ndarray
    alpha: np.ndarray

    def row(self, i: int) -> dict[int, float]:
        sel = self.dst == i
        return dict(zip(self.src[sel].tolist(), self.alpha[sel].tolist()))

    def dense(self, n_nodes: int) -> np.ndarray:
        A = np.zeros((n_nodes, n_nodes))
        A[self.dst, self.src] = self.alpha
        return A


def attention_coefficients(layer: GatLayerParams, graph, H) -> AttentionCoefficients:
    H, n_nodes, dst, src = _features(graph, H)
    if H.shape[1] != layer.d_in:
        raise DimensionMismatch(f"layer expects width {layer.d_in}, features have {H.shape[1]}")
    _, alpha = _layer(ad.Tensor(H), ad.Tensor(layer.W), ad.Tensor(layer.a), ad.Tensor(layer.bias), layer.leaky_slope,
                      layer.activation, n_nodes, dst, src)
    return AttentionCoefficients(dst, src, alpha.data)


def gat_layer_forward(layer: GatLayerParams, graph, H) -> np.ndarray:
    H, n_nodes, dst, src = _features(graph, H)
    if H.shape[1] != layer.d_in:
        raise DimensionMismatch(f"layer expects width {layer.d_in}, features have {H.shape[1]}")
    out, _ = _layer(ad.Tensor(H), ad.Tensor(layer.W), ad.Tensor(layer.a), ad.Tensor(layer.bias), layer.leaky_slope,
                    layer.activation, n_nodes, dst, src)
    return out.data


def _stack(model: GatModel, params, batch: GraphBatch):
    H = ad.Tensor(batch.x[:, None])
    for layer, (W, a, bias) in zip(model.layers, params):
        H, _ = _layer(H, W, a, bias, layer.leaky_slope, layer.activation, batch.n_nodes, batch.dst, batch.src)
    node_out = ad.reshape(H, (-1,))
    return ad.take(node_out, batch.mu_nodes), ad.take(node_out, batch.omega_nodes)


def power_head(mu, omega, ir, ii):
    """(P, Q) from predicted conjugate currents; works on Tensors or arrays."""
    if isinstance(ir, ad.Tensor):
        p = ir * mu - ii * omega
        q = ii * mu + ir * omega
        return p, q
    return recover_power(mu, omega, ir, ii)


def batch_forward(model: GatModel, batch: GraphBatch):
    params = [(ad.Tensor(l.W), ad.Tensor(l.a), ad.Tensor(l.bias)) for l in model.layers]
    ir, ii = _stack(model, params, batch)
    p, q = power_head(batch.mu, batch.omega, ir, ii)
    return ir.data, ii.data, p.data, q.data


def model_forward(model: GatModel, graph: VoltGraph):
    """``(ir_hat, ii_hat, p_hat, q_hat)`` for a graph loaded with one instance."""
    if not isinstance(graph, VoltGraph):
        raise TypeError("model_forward expects a loaded VoltGraph")
    batch = make_batch([(graph, graph.mu, graph.omega)])
    return batch_forward(model, batch)


def predict(model: GatModel, graph: VoltGraph, mu, omega, chunk: int = 256):
    """Batched ``(p_hat, q_hat)`` for stacked ``(k, n)`` voltage instances."""
    mu = np.atleast_2d(mu)
    omega = np.atleast_2d(omega)
    ps, qs = [], []
    for s in range(0, mu.shape[0], chunk):
        batch = make_batch([(graph, mu[s:s + chunk], omega[s:s + chunk])])
        _, _, p, q = batch_forward(model, batch)
        ps.append(p.reshape(-1, graph.n_bus))
        qs.append(q.reshape(-1, graph.n_bus))
    return np.concatenate(ps), np.concatenate(qs)


def loss(p_hat, q_hat, p, q, mask=None) -> float:
    """Masked mean squared error over P and Q, equally weighted."""
    return power_loss(p_hat, q_hat, p, q, mask)


# --------------------------------------------------------------------------
# training

@dataclass
class _Item:
    variant: int
    row: int


class _Corpus:
    """Flat index over (variant, row) pairs of one split, plus cached graphs."""

    def __init__(self, ds: Dataset, tag: str, target: LossTarget):
        self.graphs = [graph_from_edges(v.n, v.edge_list) for v in ds.variants]
        self.variants = [v.only(tag) for v in ds.variants]
        self.items = np.array([(k, r) for k, v in enumerate(self.variants) for r in range(v.n_instances)],
                              dtype=int).reshape(-1, 2)
        self.target = target
        self.currents = None
        if target == LossTarget.CURRENT:
            self.currents = []
            for v in self.variants:
                if v.case is None:
                    raise ValueError("CURRENT loss needs datasets loaded with branch parameters")
                from .case import build_ybus
                self.currents.append(conjugate_currents(build_ybus(v.case), v.mu, v.omega))

    def __len__(self):
        return len(self.items)

    def batch(self, idx):
        """Union batch for item indices, grouped by variant in index order."""
        sel = self.items[np.sort(idx)]
        parts, targets = [], []
        for k in np.unique(sel[:, 0]):
            rows = sel[sel[:, 0] == k, 1]
            v = self.variants[k]
            parts.append((self.graphs[k], v.mu[rows], v.omega[rows]))
            if self.target == LossTarget.CURRENT:
                ir, ii = self.currents[k]
                targets.append((ir[rows].ravel(), ii[rows].ravel()))
            else:
                targets.append((v.p[rows].ravel(), v.q[rows].ravel()))
        batch = make_batch(parts)
        first = np.concatenate([t[0] for t in targets])
        second = np.concatenate([t[1] for t in targets])
        return batch, first, second


def _batch_loss(model, params, corpus: _Corpus, idx):
    batch, t1, t2 = corpus.batch(idx)
    ir, ii = _stack(model, params, batch)
    if corpus.target == LossTarget.CURRENT:
        out1, out2 = ir, ii
    else:
        out1, out2 = power_head(batch.mu, batch.omega, ir, ii)
    diff = ad.concat([out1 - t1, out2 - t2])
    return ad.mean(ad.square(diff))


def evaluate_loss(model: GatModel, corpus: _Corpus, chunk: int = 512) -> float:
    params = [(ad.Tensor(l.W), ad.Tensor(l.a), ad.Tensor(l.bias)) for l in model.layers]
    total, count = 0.0, 0
    for s in range(0, len(corpus), chunk):
        idx = np.arange(s, min(s + chunk, len(corpus)))
        value = float(_batch_loss(model, params, corpus, idx).data)
        n = sum(corpus.variants[k].n for k in corpus.items[idx, 0])
        total += value * n
        count += n
    return total / count


def train(model: GatModel, dataset: Dataset, cfg: TrainConfig | None = None):
    """Adam on mini-batches of graphs; returns ``(model, history)`` with best-val weights."""
    cfg = cfg or TrainConfig()
    train_set = _Corpus(dataset, TRAIN, cfg.loss_target)
    if len(train_set) == 0:
        raise EmptyInput("dataset has no training records")
    val_set = _Corpus(dataset, VAL, cfg.loss_target)
    params = [(ad.parameter(l.W), ad.parameter(l.a), ad.parameter(l.bias)) for l in model.layers]
    flat = [t for pair in params for t in pair]

    def sync():
        model.set_parameters([t.data for t in flat])

    def val_loss():
        if len(val_set) == 0:
            return None
        sync()
        return evaluate_loss(model, val_set)

    hist = fit(flat, len(train_set), lambda idx: _batch_loss(model, params, train_set, idx), val_loss, cfg)
    sync()
    model.metadata.update(training=cfg.to_dict(), best_epoch=hist.best_epoch,
                          train_records=len(train_set), base_case_id=dataset.base_case_id)
    return model, hist


def loss_and_gradient(model: GatModel, batch: GraphBatch, p, q):
    """Power-loss value and per-parameter gradients (used for gradient checks)."""
    params = [(ad.parameter(l.W), ad.parameter(l.a), ad.parameter(l.bias)) for l in model.layers]
    ir, ii = _stack(model, params, batch)
    ph, qh = power_head(batch.mu, batch.omega, ir, ii)
    value = ad.mean(ad.square(ad.concat([ph - np.ravel(p), qh - np.ravel(q)])))
    value.backward()
    grads = []
    for group in params:
        grads += [t.grad if t.grad is not None else np.zeros_like(t.data) for t in group]
    return float(value.data), grads
