"""Fixed-topology comparison models mapping ``(mu, omega)`` to ``(P, Q)``.

``MlpModel`` is a dense feed-forward regressor over the stacked voltage
vector. ``TpbnnModel`` is a bilinear form per bus and quantity whose
coefficients are pruned to the network's coupling pattern: for bus ``i``
only products pairing one of bus ``i``'s own voltage components with a
component of a bus in ``{i} + neighbours(i)`` carry a weight. The power flow
equations are exactly of this form, so the model class contains the truth.
Both models are tied to one topology and reject inputs of any other size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import TRAIN, VAL, Dataset
from .errors import DimensionMismatch, EmptyInput, MixedTopology
from .training import TrainConfig, fit


def _stacked(mu, omega, n):
    mu = np.asarray(mu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if mu.shape != omega.shape or mu.shape[-1] != n:
        raise DimensionMismatch(f"model is built for {n} buses, got mu{mu.shape} omega{omega.shape}")
    return np.concatenate([np.atleast_2d(mu), np.atleast_2d(omega)], axis=1), mu.ndim == 1


# --------------------------------------------------------------------------
# MLP

@dataclass
class MlpModel:
    weights: list[np.ndarray]   # (out, in) per layer
    biases: list[np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_bus: int, hidden=None, seed: int = 0) -> MlpModel:
        """Two hidden layers of width ``4n`` unless ``hidden`` says otherwise."""
        hidden = [4 * n_bus, 4 * n_bus] if hidden is None else list(hidden)
        sizes = [2 * n_bus] + hidden + [2 * n_bus]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for d_in, d_out in zip(sizes, sizes[1:]):
            lim = np.sqrt(6.0 / (d_in + d_out))
            weights.append(rng.uniform(-lim, lim, size=(d_out, d_in)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases, {"init_seed": seed})

    @property
    def n_bus(self) -> int:
        return self.weights[0].shape[1] // 2

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def parameters(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_parameters(self, arrays):
        arrays = list(arrays)
        self.weights = [np.array(a, dtype=float) for a in arrays[0::2]]
        self.biases = [np.array(a, dtype=float) for a in arrays[1::2]]


def _mlp_graph(weights, biases, x):
    h = ad.as_tensor(x)
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        h = ad.matmul(h, _T(W)) + b
        if k < last:
            h = ad.elu(h)
    return h


def _T(W):
    W = ad.as_tensor(W)
    out = ad.Tensor(W.data.T, (W,))
    out.backward_fn = lambda g: ad._accum(W, g.T)
    return out


def mlp_forward(model: MlpModel, mu, omega):
    x, single = _stacked(mu, omega, model.n_bus)
    out = _mlp_graph(model.weights, model.biases, x).data
    n = model.n_bus
    p, q = out[:, :n], out[:, n:]
    return (p[0], q[0]) if single else (p, q)


# --------------------------------------------------------------------------
# topology-pruned bilinear network

def coupling_pairs(n_bus: int, edge_list):
    """Allowed ``(bus, a, b)`` triples with ``a <= b`` indexing ``v = [mu | omega]``."""
    nbrs = [{i} for i in range(n_bus)]
    for i, j in edge_list:
        nbrs[int(i)].add(int(j))
        nbrs[int(j)].add(int(i))
    bus, first, second = [], [], []
    for i in range(n_bus):
        own = (i, n_bus + i)
        local = sorted(c for k in nbrs[i] for c in (k, n_bus + k))
        seen = set()
        for a in own:
            for b in local:
                key = (min(a, b), max(a, b))
                if key not in seen:
                    seen.add(key)
                    bus.append(i)
                    first.append(key[0])
                    second.append(key[1])
    return np.array(bus, dtype=int), np.array(first, dtype=int), np.array(second, dtype=int)


@dataclass
class TpbnnModel:
    """Per-bus quadratic forms ``P_i = v' M^P_i v``, ``Q_i = v' M^Q_i v``.

    Stored as one coefficient per allowed monomial ``v_a * v_b``; entries
    outside the coupling pattern have no storage and are therefore always zero.
    """

    n_bus: int
    edge_list: list[tuple[int, int]]
    coef_p: np.ndarray
    coef_q: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edge_list = [(int(i), int(j)) for i, j in self.edge_list]
        self.bus, self.first, self.second = coupling_pairs(self.n_bus, self.edge_list)
        self.coef_p = np.asarray(self.coef_p, dtype=float).ravel()
        self.coef_q = np.asarray(self.coef_q, dtype=float).ravel()
        if self.coef_p.shape != self.bus.shape or self.coef_q.shape != self.bus.shape:
            raise DimensionMismatch(f"expected {len(self.bus)} coefficients per quantity")
        scatter = np.zeros((len(self.bus), self.n_bus))
        scatter[np.arange(len(self.bus)), self.bus] = 1.0
        self._scatter = scatter

    @classmethod
    def init(cls, n_bus: int, edge_list, seed: int = 0) -> TpbnnModel:
        k = len(coupling_pairs(n_bus, edge_list)[0])
        return cls(n_bus, list(edge_list), np.zeros(k), np.zeros(k), {"init_seed": seed})

    @classmethod
    def from_admittance(cls, Y, edge_list) -> TpbnnModel:
        """Coefficients read off the rectangular power flow equations for a known Y."""
        Yd = Y.dense() if hasattr(Y, "dense") else np.asarray(Y)
        G, B = Yd.real, Yd.imag
        n = Yd.shape[0]
        model = cls.init(n, edge_list)
        cp = np.zeros(len(model.bus))
        cq = np.zeros(len(model.bus))
        for k, (i, a, b) in enumerate(zip(model.bus, model.first, model.second)):
            # orient the monomial as (own component of bus i, component of bus j)
            own, other = (a, b) if a in (i, n + i) else (b, a)
            j = other % n
            own_real, other_real = own < n, other < n
            g, bb = G[i, j], B[i, j]
            if j == i:
                if own_real and other_real or not own_real and not other_real:
                    cp[k], cq[k] = g, -bb
                # the mu_i*omega_i terms cancel exactly
                continue
            if own_real and other_real:
                cp[k], cq[k] = g, -bb
            elif not own_real and not other_real:
                cp[k], cq[k] = g, -bb
            elif not own_real and other_real:        # omega_i * mu_j
                cp[k], cq[k] = bb, g
            else:                                    # mu_i * omega_j
                cp[k], cq[k] = -bb, -g
        model.coef_p, model.coef_q = cp, cq
        return model

    def mask(self) -> np.ndarray:
        """``(n, 2n, 2n)`` boolean coupling pattern per bus."""
        m = np.zeros((self.n_bus, 2 * self.n_bus, 2 * self.n_bus), dtype=bool)
        m[self.bus, self.first, self.second] = True
        m[self.bus, self.second, self.first] = True
        return m

    def matrices(self):
        """Dense symmetric ``(M^P, M^Q)``, each ``(n, 2n, 2n)``."""
        out = []
        for c in (self.coef_p, self.coef_q):
            M = np.zeros((self.n_bus, 2 * self.n_bus, 2 * self.n_bus))
            off = self.first != self.second
            M[self.bus[off], self.first[off], self.second[off]] = c[off] / 2
            M[self.bus[off], self.second[off], self.first[off]] = c[off] / 2
            d = ~off
            M[self.bus[d], self.first[d], self.second[d]] = c[d]
            out.append(M)
        return tuple(out)

    def features(self, v):
        return v[:, self.first] * v[:, self.second]

    def parameters(self):
        return [self.coef_p, self.coef_q]

    def set_parameters(self, arrays):
        self.coef_p, self.coef_q = (np.array(a, dtype=float).ravel() for a in arrays)


def tpbnn_forward(model: TpbnnModel, mu, omega):
    v, single = _stacked(mu, omega, model.n_bus)
    F = model.features(v)
    p = (F * model.coef_p) @ model._scatter
    q = (F * model.coef_q) @ model._scatter
    return (p[0], q[0]) if single else (p, q)


# --------------------------------------------------------------------------
# training

def _single_topology(dataset: Dataset):
    ids = {v.variant_id for v in dataset.variants}
    if len(ids) != 1:
        raise MixedTopology(f"baselines train on one topology, dataset has variants {sorted(ids)}")
    return dataset.variants[0]


def train_baseline(model, dataset: Dataset, cfg: TrainConfig | None = None):
    """Adam on the masked P/Q mean squared error; returns ``(model, history)``."""
    cfg = cfg or TrainConfig()
    data = _single_topology(dataset)
    if data.n != model.n_bus:
        raise DimensionMismatch(f"model is built for {model.n_bus} buses, data has {data.n}")
    tr, va = data.only(TRAIN), data.only(VAL)
    if tr.n_instances == 0:
        raise EmptyInput("dataset has no training records")
    params = [ad.parameter(p) for p in model.parameters()]

    if isinstance(model, TpbnnModel):
        feats = {tag: model.features(np.concatenate([d.mu, d.omega], axis=1)) for tag, d in (("tr", tr), ("va", va))}
        scatter = model._scatter

        def predict(idx, part):
            F = feats[part][idx]
            return ad.matmul(ad.mul(F, params[0]), scatter), ad.matmul(ad.mul(F, params[1]), scatter)
    else:
        xs = {tag: np.concatenate([d.mu, d.omega], axis=1) for tag, d in (("tr", tr), ("va", va))}
        n = model.n_bus

        def predict(idx, part):
            out = _mlp_graph(params[0::2], params[1::2], xs[part][idx])
            flat = ad.reshape(out, (-1,))
            k = len(idx)
            cols = np.arange(2 * n)
            p_idx = (np.arange(k)[:, None] * 2 * n + cols[None, :n]).ravel()
            q_idx = (np.arange(k)[:, None] * 2 * n + cols[None, n:]).ravel()
            return ad.reshape(ad.take(flat, p_idx), (k, n)), ad.reshape(ad.take(flat, q_idx), (k, n))

    def batch_loss(idx, part="tr", d=tr):
        p_hat, q_hat = predict(idx, part)
        diff = ad.concat([ad.reshape(p_hat - d.p[idx], (-1,)), ad.reshape(q_hat - d.q[idx], (-1,))])
        return ad.mean(ad.square(diff))

    def val_loss():
        if va.n_instances == 0:
            return None
        return float(batch_loss(np.arange(va.n_instances), "va", va).data)

    hist = fit(params, tr.n_instances, batch_loss, val_loss, cfg)
    model.set_parameters([p.data for p in params])
    model.metadata.update(training=cfg.to_dict(), best_epoch=hist.best_epoch, variant_id=data.variant_id,
                          base_case_id=dataset.base_case_id)
    return model, hist
