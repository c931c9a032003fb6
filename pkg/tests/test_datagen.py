"""Topology/injection sampling, dataset generation and dataset files."""

import json
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from gatpf.case import BusType, is_connected, serialize_case
from gatpf.datagen import (SamplerConfig, TEST, TRAIN, VAL, assign_splits, audit_dataset, file_sha256,
                           generate_dataset, read_dataset, residuals, rng_for, sample_injections,
                           random_spanning_tree, sample_topology, wilson_spanning_tree, write_dataset, meta_path)
from gatpf.errors import EmptyInput, YieldTooLow

from conftest import bundled, small_dataset


def test_wilson_is_uniform_on_k4():
    # K4 has 4^(4-2) = 16 labelled spanning trees
    rng = np.random.default_rng(7)
    counts = Counter(tuple(wilson_spanning_tree(4, rng)) for _ in range(16000))
    assert len(counts) == 16
    assert all(is_connected(4, list(t)) and len(t) == 3 for t in counts)
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_graph_spanning_tree_is_uniform():
    # 4-cycle plus a doubled chord: 12 spanning trees by the matrix-tree theorem
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (2, 0)]
    rng = np.random.default_rng(3)
    counts = Counter(tuple(random_spanning_tree(4, edges, rng)) for _ in range(12000))
    assert len(counts) == 12
    assert all(is_connected(4, [edges[k] for k in t]) and len(t) == 3 for t in counts)
    assert stats.chisquare(list(counts.values())).pvalue > 1e-3


def test_wilson_small_sizes():
    rng = np.random.default_rng(0)
    assert wilson_spanning_tree(1, rng) == []
    assert wilson_spanning_tree(2, rng) == [(0, 1)]


def within(value, ref, lo=0.9, hi=1.1):
    a, b = sorted((lo * ref, hi * ref))
    return a - 1e-15 <= value <= b + 1e-15


@pytest.mark.parametrize("name", ["case9", "case14", "case30", "case57"])
def test_topology_contract(name):
    base = bundled(name)
    cfg = SamplerConfig()
    for v in range(3):
        var = sample_topology(base, rng_for(4, 1, v), cfg)
        assert var.n_bus == base.n_bus
        assert len(var.active_branches()) == len(base.active_branches())
        edges = var.edge_list()
        assert is_connected(var.n_bus, edges)
        assert len({tuple(sorted(e)) for e in edges}) == len(edges)
        assert all(i != j for i, j in edges)
        assert var.buses == base.buses and var.gens == base.gens
        refs = base.active_branches()
        for br in var.branches:
            assert any(within(br.r, ref.r) and within(br.x, ref.x) and within(br.b, ref.b)
                       and br.tap == ref.tap and br.shift == ref.shift for ref in refs)


def test_topology_is_deterministic():
    base = bundled("case30")
    a = sample_topology(base, rng_for(9, 1, 0))
    b = sample_topology(base, rng_for(9, 1, 0))
    assert serialize_case(a) == serialize_case(b)
    c = sample_topology(base, rng_for(9, 1, 1))
    assert serialize_case(a) != serialize_case(c)


def test_injection_ranges():
    base = bundled("case30")
    types = {b.id: b.btype for b in base.buses}
    for k in range(50):
        inst = sample_injections(base, rng_for(1, 2, 0, k))
        for g0, g in zip(base.gens, inst.gens):
            if types[g.bus] == BusType.PV:
                lo, hi = sorted((0.75 * g0.pg, 1.25 * g0.pg))
                assert lo <= g.pg <= hi
                assert 0.95 <= g.vg <= 1.05
            else:
                assert g == g0
        for b0, b in zip(base.buses, inst.buses):
            assert b.btype == b0.btype
            if b.btype == BusType.PQ:
                assert min(0.5 * b0.pd, 1.5 * b0.pd) <= b.pd <= max(0.5 * b0.pd, 1.5 * b0.pd)
                assert min(0.5 * b0.qd, 1.5 * b0.qd) <= b.qd <= max(0.5 * b0.qd, 1.5 * b0.qd)
            else:
                assert b == b0


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(pv_p_range=(1.2, 0.8))
    with pytest.raises(ValueError):
        SamplerConfig(branch_param_range=(0.0, 1.0))
    cfg = SamplerConfig(seed=3)
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("k", [1, 2, 7, 10, 33, 200])
def test_split_proportions(k):
    tags = assign_splits(k, 0, 0)
    for tag, frac in ((TRAIN, 0.6), (VAL, 0.1), (TEST, 0.3)):
        assert abs(np.sum(tags == tag) - frac * k) <= 1


def test_single_variant_is_base_topology():
    ds = small_dataset("case9")
    v = ds.variants[0]
    assert v.edge_list == bundled("case9").edge_list()
    assert v.n_instances == 40
    assert residuals(v).max() <= 1e-10


def test_multi_variant_records_pass_invariant():
    ds = generate_dataset(bundled("case14"), 3, 10, SamplerConfig(seed=2))
    assert [v.variant_id for v in ds.variants] == [0, 1, 2]
    assert ds.n_records == 30
    for v in ds.variants:
        assert is_connected(v.n, v.edge_list)
        assert residuals(v).max() <= 1e-6


def test_empty_request_rejected():
    with pytest.raises(EmptyInput):
        generate_dataset(bundled("case9"), 1, 0)
    with pytest.raises(EmptyInput):
        generate_dataset(bundled("case9"), 0, 5)


def test_infeasible_ranges_raise_yield_too_low():
    cfg = SamplerConfig(pq_pd_qd_range=(40.0, 50.0))
    with pytest.raises(YieldTooLow):
        generate_dataset(bundled("case30"), 1, 5, cfg)


def test_files_byte_identical_and_audited(tmp_path):
    base = bundled("case14")
    a = write_dataset(generate_dataset(base, 2, 8, SamplerConfig(seed=11)), tmp_path / "a.jsonl")
    b = write_dataset(generate_dataset(base, 2, 8, SamplerConfig(seed=11), workers=2), tmp_path / "b.jsonl")
    assert file_sha256(a) == file_sha256(b)
    assert meta_path(a).read_bytes() == meta_path(b).read_bytes()
    report = audit_dataset(a)
    assert report["passed"] and report["records"] == 16


def test_model_file_has_no_branch_parameters(tmp_path):
    path = write_dataset(small_dataset("case9"), tmp_path / "d.jsonl")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    header, record = lines[0], lines[1]
    assert set(header) == {"variant_id", "n", "base_case_id", "edge_list", "sampler_config", "solver_tol"}
    assert set(record) == {"variant_id", "split", "mu", "omega", "p", "q"}
    text = path.read_text()
    assert not any(f'"{key}"' in text for key in ("r", "x", "b", "tap", "shift", "branches", "ybus"))
    assert "BRANCH" in meta_path(path).read_text().upper()
    assert header["sampler_config"]["spanning_tree"] == "uniform (Wilson)"


def test_read_round_trip(tmp_path):
    ds = small_dataset("case9")
    path = write_dataset(ds, tmp_path / "d.jsonl")
    back = read_dataset(path)
    v, w = ds.variants[0], back.variants[0]
    for key in ("mu", "omega", "p", "q"):
        assert np.array_equal(getattr(v, key), getattr(w, key))
    assert list(v.split) == list(w.split)
    assert w.case is None
    assert read_dataset(path, with_params=True).variants[0].case.n_bus == 9
