"""Topology variants and solved power flow datasets.

A variant keeps the base case's buses and generators but rewires the branch
set: a uniformly random spanning tree over the buses plus random extra bus
pairs until the base branch count is reached. Every generated branch copies
a randomly chosen base branch and perturbs its r, x and b. Injections are then
resampled per instance and solved with Newton-Raphson; only converged
instances are kept.

Random streams are keyed on ``(seed, purpose, variant, attempt)`` so results
do not depend on worker scheduling.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .case import Branch, BusType, PowerCase, build_ybus, parse_case, serialize_case
from .errors import EmptyInput, GatpfError, YieldTooLow
from .powerflow import SolverOptions, compute_injections, solve_nr

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = "train", "val", "test"
SPLIT_FRACTIONS = (0.6, 0.1, 0.3)
RETRY_FACTOR = 10

_TOPOLOGY, _INJECTION, _SPLIT = 1, 2, 3


@dataclass(frozen=True)
class SamplerConfig:
    branch_param_range: tuple[float, float] = (0.90, 1.10)
    pv_p_range: tuple[float, float] = (0.75, 1.25)
    pv_v_range: tuple[float, float] = (0.95, 1.05)
    pq_pd_qd_range: tuple[float, float] = (0.50, 1.50)
    seed: int = 0

    def __post_init__(self):
        for name in ("branch_param_range", "pv_p_range", "pv_v_range", "pq_pd_qd_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def to_dict(self):
        d = asdict(self)
        d.update(spanning_tree="uniform (Wilson)", branch_params="once per variant",
                 injections="once per instance")
        return d

    @classmethod
    def from_dict(cls, d):
        keys = ("branch_param_range", "pv_p_range", "pv_v_range", "pq_pd_qd_range", "seed")
        return cls(**{k: tuple(d[k]) if k != "seed" else int(d[k]) for k in keys if k in d})


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, keys)])


# --------------------------------------------------------------------------
# topology sampling

def wilson_spanning_tree(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform spanning tree of the complete graph on ``n`` nodes (loop-erased walks)."""
    if n <= 1:
        return []
    in_tree = np.zeros(n, dtype=bool)
    nxt = np.full(n, -1)
    in_tree[int(rng.integers(n))] = True
    for start in range(n):
        u = start
        while not in_tree[u]:
            # uniform step to any other node of K_n
            v = int(rng.integers(n - 1))
            v += v >= u
            nxt[u] = v
            u = v
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    # last exit of every walk is its loop-erased path, so nxt is the parent map
    return sorted((min(u, int(nxt[u])), max(u, int(nxt[u]))) for u in range(n) if nxt[u] >= 0)


def random_spanning_tree(n: int, edges, rng: np.random.Generator, weights=None) -> list[int]:
    """Indices into ``edges`` of a random spanning tree of a connected multigraph.

    Same loop-erased walk as :func:`wilson_spanning_tree`, stepping along an
    incident edge chosen with probability proportional to its weight. The tree
    then has probability proportional to the product of its edge weights
    (uniform when ``weights`` is None); parallel edges are distinct choices.
    """
    weights = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=float)
    incident = [[] for _ in range(n)]
    for k, (i, j) in enumerate(edges):
        if i != j:
            incident[i].append((k, j))
            incident[j].append((k, i))
    cum = [np.cumsum([weights[k] for k, _ in inc]) for inc in incident]
    if n <= 1:
        return []
    in_tree = np.zeros(n, dtype=bool)
    via = np.full(n, -1)
    nxt = np.full(n, -1)
    in_tree[int(rng.integers(n))] = True
    for start in range(n):
        u = start
        while not in_tree[u]:
            c = cum[u]
            k, v = incident[u][min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(c) - 1)]
            via[u], nxt[u] = k, v
            u = v
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    return sorted(int(via[u]) for u in range(n) if via[u] >= 0)


def sample_topology(base: PowerCase, rng: np.random.Generator, cfg: SamplerConfig | None = None,
                    case_id: str | None = None) -> PowerCase:
    """Random variant with the base's bus count and in-service branch count."""
    cfg = cfg or SamplerConfig()
    n = base.n_bus
    base_branches = base.active_branches()
    m = len(base_branches)
    tree = wilson_spanning_tree(n, rng)
    used = set(tree)
    n_extra = m - len(tree)
    pairs = []
    if n_extra > 0:
        iu, ju = np.triu_indices(n, k=1)
        free = np.array([k for k, (i, j) in enumerate(zip(iu.tolist(), ju.tolist())) if (i, j) not in used])
        if n_extra > len(free):
            raise GatpfError(f"cannot place {m} distinct branches on {n} buses")
        pick = np.sort(rng.choice(free, size=n_extra, replace=False))
        pairs = [(int(iu[k]), int(ju[k])) for k in pick]
    lo, hi = cfg.branch_param_range
    ids = [b.id for b in base.buses]
    branches = []
    for i, j in tree + pairs:
        ref = base_branches[int(rng.integers(m))]
        sr, sx, sb = rng.uniform(lo, hi, size=3)
        if rng.random() < 0.5:
            i, j = j, i
        branches.append(Branch(fbus=ids[i], tbus=ids[j], r=ref.r * sr, x=ref.x * sx, b=ref.b * sb,
                               tap=ref.tap, shift=ref.shift, status=True))
    return replace(base, branches=tuple(branches), case_id=case_id or f"{base.case_id}-variant")


def sample_injections(case: PowerCase, rng: np.random.Generator, cfg: SamplerConfig | None = None) -> PowerCase:
    """Resample PV generation/setpoints and PQ demands; the slack is untouched."""
    cfg = cfg or SamplerConfig()
    types = {b.id: b.btype for b in case.buses}
    gens = []
    for g in case.gens:
        if g.status and types[g.bus] == BusType.PV:
            g = replace(g, pg=g.pg * rng.uniform(*cfg.pv_p_range), vg=rng.uniform(*cfg.pv_v_range))
        gens.append(g)
    buses = []
    for b in case.buses:
        if b.btype == BusType.PQ:
            fp, fq = rng.uniform(*cfg.pq_pd_qd_range, size=2)
            b = replace(b, pd=b.pd * fp, qd=b.qd * fq)
        buses.append(b)
    return replace(case, buses=tuple(buses), gens=tuple(gens))


# --------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class DatasetRecord:
    variant_id: int
    edge_list: list
    mu: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    q: np.ndarray
    split: str


@dataclass
class VariantData:
    """All instances of one topology, stacked row-wise."""

    variant_id: int
    n: int
    edge_list: list[tuple[int, int]]
    mu: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    q: np.ndarray
    split: np.ndarray
    base_case_id: str = ""
    case: PowerCase | None = field(default=None, repr=False)  # parameters: metadata only

    @property
    def n_instances(self) -> int:
        return self.mu.shape[0]

    def subset(self, rows) -> VariantData:
        rows = np.asarray(rows, dtype=int)
        return replace(self, mu=self.mu[rows], omega=self.omega[rows], p=self.p[rows],
                       q=self.q[rows], split=self.split[rows])

    def only(self, tag: str) -> VariantData:
        return self.subset(np.flatnonzero(self.split == tag))


@dataclass
class Dataset:
    variants: list[VariantData]
    base_case_id: str = ""
    sampler_config: SamplerConfig = field(default_factory=SamplerConfig)
    solver_tol: float = 1e-8

    @property
    def n_records(self) -> int:
        return sum(v.n_instances for v in self.variants)

    def only(self, tag: str) -> Dataset:
        parts = [v.only(tag) for v in self.variants]
        return replace(self, variants=[v for v in parts if v.n_instances])

    def records(self):
        for v in self.variants:
            for k in range(v.n_instances):
                yield DatasetRecord(v.variant_id, v.edge_list, v.mu[k], v.omega[k], v.p[k], v.q[k],
                                    str(v.split[k]))

    def __add__(self, other: Dataset) -> Dataset:
        return replace(self, variants=self.variants + other.variants, base_case_id="mixed")


def assign_splits(k: int, seed: int, variant_id: int) -> np.ndarray:
    perm = rng_for(seed, _SPLIT, variant_id).permutation(k)
    n_train = int(round(SPLIT_FRACTIONS[0] * k))
    n_val = int(round(SPLIT_FRACTIONS[1] * k))
    tags = np.empty(k, dtype=object)
    tags[perm[:n_train]] = TRAIN
    tags[perm[n_train:n_train + n_val]] = VAL
    tags[perm[n_train + n_val:]] = TEST
    return tags.astype(str)


MIN_YIELD = 0.1
YIELD_PROBE = 20
TOPOLOGY_RETRIES = 25


def _solve_instances(case, variant_id, n_instances, cfg, opts):
    """Converged ``(mu, omega, p, q)`` rows for ``case``, or raise :class:`YieldTooLow`.

    Gives up after ``RETRY_FACTOR * n_instances`` attempts, or early once the
    convergence rate after ``YIELD_PROBE`` attempts is below ``MIN_YIELD``.
    """
    Y = build_ybus(case)
    rows = []
    attempts = 0
    budget = RETRY_FACTOR * n_instances
    while len(rows) < n_instances and attempts < budget:
        if attempts >= YIELD_PROBE and len(rows) < MIN_YIELD * attempts:
            break
        rng = rng_for(cfg.seed, _INJECTION, variant_id, attempts)
        attempts += 1
        inst = sample_injections(case, rng, cfg)
        try:
            sol = solve_nr(inst, opts, ybus=Y)
        except GatpfError:
            continue
        rows.append((sol.mu, sol.omega, sol.p, sol.q))
    if len(rows) < n_instances:
        raise YieldTooLow(
            f"variant {variant_id} of {case.case_id}: only {len(rows)}/{attempts} samples converged"
        )
    return rows


def _pack(case, variant_id, rows, cfg):
    mu, omega, p, q = (np.array(col) for col in zip(*rows))
    return VariantData(
        variant_id=variant_id, n=case.n_bus, edge_list=case.edge_list(), mu=mu, omega=omega, p=p, q=q,
        split=assign_splits(len(rows), cfg.seed, variant_id), case=case,
    )


def _solve_variant(args):
    base, variant_id, n_instances, cfg, opts, resample = args
    if not resample:
        return _pack(base, variant_id, _solve_instances(base, variant_id, n_instances, cfg, opts), cfg)
    # a topology on which almost nothing solves is itself filtered out and redrawn
    for retry in range(TOPOLOGY_RETRIES):
        case = sample_topology(base, rng_for(cfg.seed, _TOPOLOGY, variant_id, retry), cfg,
                               case_id=f"{base.case_id}-v{variant_id}")
        try:
            rows = _solve_instances(case, variant_id, n_instances, cfg, opts)
        except YieldTooLow:
            log.info("variant %d: topology draw %d rejected (low yield)", variant_id, retry)
            continue
        return _pack(case, variant_id, rows, cfg)
    raise YieldTooLow(f"variant {variant_id}: no feasible topology in {TOPOLOGY_RETRIES} draws")


def generate_dataset(base: PowerCase, n_variants: int, n_instances: int, cfg: SamplerConfig | None = None,
                     opts: SolverOptions | None = None, workers: int = 1) -> Dataset:
    """Solve ``n_instances`` converged instances for each of ``n_variants`` topologies.

    With a single variant the base topology is used unchanged; otherwise every
    variant is a fresh :func:`sample_topology` draw.
    """
    if n_variants < 1 or n_instances < 1:
        raise EmptyInput("n_variants and n_instances must both be >= 1")
    cfg = cfg or SamplerConfig()
    opts = opts or SolverOptions()
    resample = n_variants > 1
    jobs = [(base, v, n_instances, cfg, opts, resample) for v in range(n_variants)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            variants = list(pool.map(_solve_variant, jobs))
    else:
        variants = [_solve_variant(j) for j in jobs]
    for v in variants:
        v.base_case_id = base.case_id
    return Dataset(variants, base.case_id, cfg, opts.tol)


# --------------------------------------------------------------------------
# JSON-lines I/O

def _floats(a):
    return [float(x) for x in a]


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(ds: Dataset, path) -> Path:
    """Write the model-facing JSONL file plus a sidecar with branch parameters."""
    path = Path(path)
    dumps = lambda obj: json.dumps(obj, separators=(",", ":"))
    with open(path, "w") as fh:
        for v in ds.variants:
            header = dict(variant_id=v.variant_id, n=v.n, base_case_id=v.base_case_id or ds.base_case_id,
                          edge_list=[list(e) for e in v.edge_list], sampler_config=ds.sampler_config.to_dict(),
                          solver_tol=ds.solver_tol)
            fh.write(dumps(header) + "\n")
            for k in range(v.n_instances):
                fh.write(dumps(dict(variant_id=v.variant_id, split=str(v.split[k]), mu=_floats(v.mu[k]),
                                    omega=_floats(v.omega[k]), p=_floats(v.p[k]), q=_floats(v.q[k]))) + "\n")
    meta = dict(base_case_id=ds.base_case_id, solver_tol=ds.solver_tol,
                sampler_config=ds.sampler_config.to_dict(),
                variants={str(v.variant_id): serialize_case(v.case) for v in ds.variants if v.case is not None})
    meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def read_dataset(path, with_params: bool = False) -> Dataset:
    """Load a dataset file; ``with_params`` also attaches the sidecar cases."""
    headers, rows = {}, {}
    order = []
    cfg, tol, base_id = SamplerConfig(), 1e-8, ""
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            vid = rec["variant_id"]
            if "edge_list" in rec:
                headers[vid] = rec
                rows[vid] = []
                order.append(vid)
                cfg = SamplerConfig.from_dict(rec.get("sampler_config", {}))
                tol = rec.get("solver_tol", tol)
                base_id = rec.get("base_case_id", base_id)
            else:
                rows[vid].append(rec)
    cases = {}
    if with_params:
        meta = json.loads(meta_path(path).read_text())
        cases = {int(k): parse_case(text) for k, text in meta["variants"].items()}
    variants = []
    for vid in order:
        h, rs = headers[vid], rows[vid]
        n = h["n"]
        stack = lambda key: np.array([r[key] for r in rs], dtype=float).reshape(len(rs), n)
        variants.append(VariantData(
            variant_id=vid, n=n, edge_list=[tuple(e) for e in h["edge_list"]],
            mu=stack("mu"), omega=stack("omega"), p=stack("p"), q=stack("q"),
            split=np.array([r["split"] for r in rs], dtype=str), base_case_id=h.get("base_case_id", ""),
            case=cases.get(vid),
        ))
    bases = {v.base_case_id for v in variants}
    return Dataset(variants, base_id if len(bases) <= 1 else "mixed", cfg, tol)


def audit_dataset(path, tol: float = 1e-6) -> dict:
    """Independent re-check of every record against its variant's admittance.

    Injections are recomputed with complex arithmetic ``U * conj(Y U)``
    rather than the rectangular formulas used during generation.
    """
    ds = read_dataset(path, with_params=True)
    checked = failed = 0
    worst = 0.0
    for v in ds.variants:
        Y = build_ybus(v.case).dense()
        U = v.mu + 1j * v.omega
        S = U * np.conj(U @ Y.T)
        err = np.maximum(np.abs(S.real - v.p), np.abs(S.imag - v.q)).max(axis=1)
        checked += len(err)
        failed += int(np.sum(err > tol))
        worst = max(worst, float(err.max(initial=0.0)))
    return dict(records=checked, failed=failed, max_residual=worst, passed=failed == 0 and checked > 0)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def residuals(v: VariantData) -> np.ndarray:
    """Per-record max deviation of stored (p, q) from the rectangular formulas."""
    Y = build_ybus(v.case)
    p, q = compute_injections(Y, v.mu, v.omega)
    return np.maximum(np.abs(p - v.p), np.abs(q - v.q)).max(axis=1)
