"""MLP and topology-pruned bilinear baselines."""

import numpy as np
import pytest

from gatpf.baselines import MlpModel, TpbnnModel, coupling_pairs, mlp_forward, tpbnn_forward, train_baseline
from gatpf.case import build_ybus
from gatpf.datagen import Dataset, VariantData, assign_splits
from gatpf.errors import DimensionMismatch, MixedTopology
from gatpf.powerflow import compute_injections
from gatpf.training import TrainConfig

from conftest import bundled, small_dataset
from test_powerflow import random_case


def test_mlp_zero_weights_give_zero():
    m = MlpModel.init(9)
    m.set_parameters([np.zeros_like(p) for p in m.parameters()])
    p, q = mlp_forward(m, np.ones(9), np.zeros(9))
    assert not p.any() and not q.any()
    assert m.sizes == [18, 36, 36, 18]


def test_fixed_size_models_reject_other_sizes():
    mlp = MlpModel.init(57)
    with pytest.raises(DimensionMismatch):
        mlp_forward(mlp, np.ones(56), np.zeros(56))
    tp = TpbnnModel.init(57, bundled("case57").edge_list())
    with pytest.raises(DimensionMismatch):
        tpbnn_forward(tp, np.ones(56), np.zeros(56))


def test_tpbnn_zero_coefficients_give_zero():
    tp = TpbnnModel.init(14, bundled("case14").edge_list())
    p, q = tpbnn_forward(tp, np.ones(14), np.full(14, 0.1))
    assert not p.any() and not q.any()


@pytest.mark.parametrize("name", ["case9", "case14", "case30", "case57"])
def test_tpbnn_from_admittance_is_exact(name, rng):
    case = bundled(name)
    Y = build_ybus(case)
    tp = TpbnnModel.from_admittance(Y, case.edge_list())
    mu, omega = rng.normal(1, 0.05, (20, case.n_bus)), rng.normal(0, 0.2, (20, case.n_bus))
    p_hat, q_hat = tpbnn_forward(tp, mu, omega)
    p, q = compute_injections(Y, mu, omega)
    assert np.abs(p_hat - p).max() <= 1e-12
    assert np.abs(q_hat - q).max() <= 1e-12


def test_tpbnn_matches_dense_double_loop(rng):
    case = bundled("case9")
    tp = TpbnnModel.init(9, case.edge_list())
    tp.set_parameters([rng.normal(size=tp.coef_p.shape), rng.normal(size=tp.coef_q.shape)])
    MP, MQ = tp.matrices()
    mask = tp.mask()
    assert not MP[~mask].any() and not MQ[~mask].any()
    for _ in range(3):
        v = rng.normal(size=18)
        p, q = tpbnn_forward(tp, v[:9], v[9:])
        for i in range(9):
            sp = sq = 0.0
            for j in range(18):
                for k in range(18):
                    sp += v[j] * MP[i, j, k] * v[k]
                    sq += v[j] * MQ[i, j, k] * v[k]
            assert p[i] == pytest.approx(sp, abs=1e-12)
            assert q[i] == pytest.approx(sq, abs=1e-12)


def test_coupling_pattern_includes_intra_bus_terms():
    bus, a, b = coupling_pairs(2, [(0, 1)])
    triples = set(zip(bus.tolist(), a.tolist(), b.tolist()))
    assert (0, 0, 2) in triples                 # mu_0 * omega_0
    assert (0, 1, 3) not in triples             # neither factor belongs to bus 0
    assert (1, 1, 3) in triples


def test_mask_preserved_by_training():
    ds = small_dataset("case9", instances=40)
    tp = TpbnnModel.init(9, ds.variants[0].edge_list)
    stored = tp.coef_p.size
    tp, _ = train_baseline(tp, ds, TrainConfig(epochs=5, batch_size=8, learning_rate=1e-2))
    MP, MQ = tp.matrices()
    mask = tp.mask()
    assert tp.coef_p.size == stored
    assert np.count_nonzero(MP[~mask]) == 0 and np.count_nonzero(MQ[~mask]) == 0
    assert np.any(tp.coef_p)


def test_mixed_topology_rejected():
    ds = small_dataset("case9", instances=10)
    v = ds.variants[0]
    other = VariantData(1, v.n, v.edge_list, v.mu, v.omega, v.p, v.q, v.split)
    with pytest.raises(MixedTopology):
        train_baseline(MlpModel.init(9), Dataset([v, other]))
    with pytest.raises(DimensionMismatch):
        train_baseline(MlpModel.init(14), ds)


def test_tpbnn_identifies_five_bus_system(rng):
    # admittances reach ~35 and the features are nearly collinear near 1 p.u.,
    # so the step size has to be large early and small late
    case = random_case(5, rng)
    Y = build_ybus(case)
    k = 300
    mu, omega = rng.normal(1, 0.05, (k, 5)), rng.normal(0, 0.1, (k, 5))
    p, q = compute_injections(Y, mu, omega)
    v = VariantData(0, 5, case.edge_list(), mu, omega, p, q, assign_splits(k, 0, 0))
    tp, _ = train_baseline(TpbnnModel.init(5, case.edge_list()), Dataset([v]),
                           TrainConfig(epochs=3000, batch_size=32, learning_rate=0.3, lr_decay=0.998))
    test = v.only("test")
    p_hat, q_hat = tpbnn_forward(tp, test.mu, test.omega)
    err = np.sqrt(np.mean(np.concatenate([(p_hat - test.p).ravel(), (q_hat - test.q).ravel()]) ** 2))
    assert err <= 1e-3


@pytest.mark.parametrize("kind", ["mlp", "tpbnn"])
def test_training_is_reproducible(kind):
    ds = small_dataset("case9", instances=30)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=4)

    def build():
        if kind == "mlp":
            return MlpModel.init(9, seed=1)
        return TpbnnModel.init(9, ds.variants[0].edge_list)

    a, ha = train_baseline(build(), ds, cfg)
    b, hb = train_baseline(build(), ds, cfg)
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)
    assert ha.train_loss == hb.train_loss
