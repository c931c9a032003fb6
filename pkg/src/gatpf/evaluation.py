"""RMSE reporting and the three experiments.

Each experiment writes its datasets, trained models, per-instance
predictions and CSV tables under one output directory. Spread is the
population standard deviation of the RMSE over independent training seeds.
Every CSV row carries the seeds and the dataset hashes it was computed from,
and numeric cells use ``repr`` so a rerun with the same spec is byte-identical.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import MlpModel, TpbnnModel, mlp_forward, tpbnn_forward, train_baseline
from .case import PowerCase, is_connected, load_bundled, load_case
from .datagen import TEST, Dataset, SamplerConfig, VariantData, file_sha256, generate_dataset, read_dataset, \
    random_spanning_tree, rng_for, write_dataset
from .errors import DisconnectedTopology, EmptyInput, ShapeMismatch, ValidationError, YieldTooLow
from .gat import GatModel, predict, train
from .graph import graph_from_edges
from .serialization import model_hash, save_model
from .training import TrainConfig

log = logging.getLogger(__name__)

MODELS = ("MLP", "TPBNN", "GAT*", "GAT")
_REMOVAL = 7          # rng stream for branch removal draws
REMOVAL_DRAWS = 2000  # reduced topologies tried per corpus; bare trees of case57 solve ~0.5% of the time


# --------------------------------------------------------------------------
# RMSE

@dataclass(frozen=True)
class RmseReport:
    p: float
    q: float
    count: int                 # number of compared entries per quantity
    p_spread: float = 0.0
    q_spread: float = 0.0
    runs: int = 1
    model_hash: str = ""
    dataset_hash: str = ""

    def __post_init__(self):
        if self.p < 0 or self.q < 0 or self.count <= 0:
            raise ValueError("RMSE must be >= 0 and counts > 0")


def rmse_value(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise EmptyInput("cannot take the RMSE of zero entries")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def rmse(pred, truth, model_hash: str = "", dataset_hash: str = "") -> RmseReport:
    """``pred`` and ``truth`` are ``(p, q)`` pairs of equally shaped arrays."""
    (p_hat, q_hat), (p, q) = pred, truth
    rp, rq = rmse_value(p_hat, p), rmse_value(q_hat, q)
    return RmseReport(rp, rq, int(np.size(p)), model_hash=model_hash, dataset_hash=dataset_hash)


def aggregate(reports) -> RmseReport:
    """Mean RMSE over runs, with the standard deviation as spread."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no reports to aggregate")
    p = np.array([r.p for r in reports])
    q = np.array([r.q for r in reports])
    return RmseReport(float(p.mean()), float(q.mean()), reports[0].count, float(p.std()), float(q.std()),
                      len(reports), ",".join(r.model_hash for r in reports),
                      ",".join(sorted({r.dataset_hash for r in reports})))


# --------------------------------------------------------------------------
# experiment specification

class Experiment(enum.Enum):
    E1_ACCURACY = "E1_ACCURACY"
    E2_BROKEN_BRANCH = "E2_BROKEN_BRANCH"
    E3_CROSS_SIZE = "E3_CROSS_SIZE"


DESK_E1 = {"case30": 2000, "case57": 3000, "case118": 4000}
FULL_E1 = {"case30": 5000, "case57": 8000, "case118": 12000}


@dataclass
class ExperimentSpec:
    experiment: Experiment
    base_cases: list[str] = field(default_factory=list)
    n_instances: dict[str, int] = field(default_factory=dict)   # E1: per case
    n_variants: int = 20                                        # E2/E3 training corpora
    variant_instances: int = 200
    baseline_instances: int = 2000                              # E2: fixed-topology corpus
    removal_counts: list[int] = field(default_factory=lambda: [0, 6, 12, 18, 24])
    test_instances: int = 200                                   # E2/E3 held-out corpora
    test_variants: int = 5                                      # E3
    train_cases: list[str] = field(default_factory=list)        # E3
    test_cases: list[str] = field(default_factory=list)         # E3
    models: list[str] = field(default_factory=lambda: list(MODELS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    data_seed: int = 2024
    gat_layers: int = 3
    gat_hidden: int = 32
    gat_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, batch_size=32,
                                                                       learning_rate=1e-3))
    mlp_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200, batch_size=32,
                                                                       learning_rate=1e-3))
    # the bilinear features are nearly collinear (mu_i * mu_j ~ 1), so Adam needs a long, hot schedule
    tpbnn_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1000, batch_size=32,
                                                                         learning_rate=3e-2, lr_decay=0.995))
    pad_to: int | None = None
    full_scale: bool = False

    def __post_init__(self):
        self.experiment = Experiment(self.experiment)
        if isinstance(self.gat_train, dict):
            self.gat_train = _train_config(self.gat_train)
        for name in ("mlp_train", "tpbnn_train"):
            if isinstance(getattr(self, name), dict):
                setattr(self, name, _train_config(getattr(self, name)))
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValidationError(f"unknown models {sorted(unknown)}")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if any(r < 0 for r in self.removal_counts):
            raise ValidationError("removal counts must be non-negative")

    @classmethod
    def default(cls, experiment) -> ExperimentSpec:
        experiment = Experiment(experiment)
        if experiment == Experiment.E1_ACCURACY:
            return cls(experiment, base_cases=list(DESK_E1), n_instances=dict(DESK_E1))
        if experiment == Experiment.E2_BROKEN_BRANCH:
            return cls(experiment, base_cases=["case57"], models=["MLP", "TPBNN", "GAT"])
        return cls(experiment, train_cases=["case30", "case57", "case118"],
                   test_cases=["case9", "case14", "case300"], models=["GAT"])

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        d = dict(d)
        base = cls.default(d.pop("experiment"))
        for key, value in d.items():
            if not hasattr(base, key):
                raise ValidationError(f"unknown spec field {key!r}")
            setattr(base, key, value)
        base.__post_init__()
        return base

    @classmethod
    def load(cls, path) -> ExperimentSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def scaled(self) -> ExperimentSpec:
        """The paper's dataset sizes in place of the desk-scale defaults."""
        if not self.full_scale:
            return self
        if self.experiment == Experiment.E1_ACCURACY:
            return replace(self, n_instances={c: FULL_E1.get(c, n) for c, n in self.n_instances.items()})
        return replace(self, n_variants=120, variant_instances=2000)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = self.experiment.value
        d["gat_train"] = self.gat_train.to_dict()
        d["mlp_train"] = self.mlp_train.to_dict()
        d["tpbnn_train"] = self.tpbnn_train.to_dict()
        return d


def _train_config(d: dict) -> TrainConfig:
    from .training import LossTarget
    d = dict(d)
    if "loss_target" in d:
        d["loss_target"] = LossTarget(d["loss_target"])
    return TrainConfig(**d)


def resolve_case(name: str) -> PowerCase:
    """A bundled case by name (``case57``) or a MATPOWER file path."""
    path = Path(name)
    if path.suffix == ".m" or path.exists():
        return load_case(path)
    return load_bundled(name)


def max_removals(case: PowerCase) -> int:
    """Branches removable while a spanning tree can survive: ``m - (n - 1)``."""
    return len(case.active_branches()) - (case.n_bus - 1)


def check_removals(case: PowerCase, counts) -> None:
    limit = max_removals(case)
    bad = [r for r in counts if r > limit]
    if bad:
        raise ValidationError(f"{case.case_id}: at most {limit} branches can be removed, asked for {bad}")


def remove_branches(case: PowerCase, count: int, rng: np.random.Generator) -> PowerCase:
    """Take ``count`` random in-service branches out, keeping the network connected.

    A random spanning tree of the base network is protected and the removed
    branches are drawn uniformly from the rest, so every draw is connected
    even at ``count == m - (n - 1)`` where blind rejection would almost never
    hit. The tree is weighted by series admittance: bare trees of weak lines
    almost never admit a power flow solution.
    """
    check_removals(case, [count])
    active = [k for k, br in enumerate(case.branches) if br.status]
    ends = case.edge_list()
    if not is_connected(case.n_bus, ends):
        raise DisconnectedTopology(f"{case.case_id}: base network is not connected")
    z = np.array([abs(complex(case.branches[k].r, case.branches[k].x)) for k in active])
    weights = 1.0 / np.maximum(z, 1e-6)
    tree = set(random_spanning_tree(case.n_bus, ends, rng, weights))
    spare = [k for pos, k in enumerate(active) if pos not in tree]
    drop = set(rng.choice(spare, size=count, replace=False).tolist()) if count else set()
    branches = [replace(br, status=0) if k in drop else br for k, br in enumerate(case.branches)]
    return case.replace(branches=branches, case_id=f"{case.case_id}-r{count}")


# --------------------------------------------------------------------------
# shared helpers

def predict_variant(model, v: VariantData):
    if isinstance(model, GatModel):
        return predict(model, graph_from_edges(v.n, v.edge_list), v.mu, v.omega)
    if isinstance(model, MlpModel):
        return mlp_forward(model, v.mu, v.omega)
    return tpbnn_forward(model, v.mu, v.omega)


def evaluate(model, ds: Dataset, dataset_hash: str = "", split: str | None = TEST):
    """RMSE over every instance of ``ds`` (restricted to ``split`` if given)."""
    parts = ds.only(split).variants if split else ds.variants
    if not parts:
        raise EmptyInput("no instances to evaluate")
    preds = [predict_variant(model, v) for v in parts]
    p_hat = np.concatenate([p.ravel() for p, _ in preds])
    q_hat = np.concatenate([q.ravel() for _, q in preds])
    p = np.concatenate([v.p.ravel() for v in parts])
    q = np.concatenate([v.q.ravel() for v in parts])
    report = rmse((p_hat, q_hat), (p, q), model_hash(model), dataset_hash)
    return report, preds


def pad(a, width: int) -> np.ndarray:
    """Zero-fill rows of ``a`` on the right to ``width`` columns."""
    a = np.atleast_2d(a)
    if a.shape[1] > width:
        raise ShapeMismatch(f"cannot pad {a.shape[1]} columns to {width}")
    out = np.zeros((a.shape[0], width))
    out[:, : a.shape[1]] = a
    return out


def write_predictions(path: Path, preds, parts, width: int) -> None:
    """Per-instance predictions, zero-padded to ``width`` buses, one CSV row per instance."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant_id", "row", "n"] + [f"p{k}" for k in range(width)] + [f"q{k}" for k in range(width)])
        for (p, q), v in zip(preds, parts):
            p, q = pad(p, width), pad(q, width)
            for r in range(p.shape[0]):
                w.writerow([v.variant_id, r, v.n] + [repr(float(x)) for x in p[r]] + [repr(float(x)) for x in q[r]])


def read_predictions(path: Path):
    """Inverse of :func:`write_predictions`, with padding stripped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    width = (len(rows[0]) - 3) // 2
    p, q = [], []
    for row in rows[1:]:
        n = int(row[2])
        vals = np.array(row[3:], dtype=float)
        p.append(vals[:n])
        q.append(vals[width: width + n])
    return p, q


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class _Run:
    """Output directory bookkeeping for one experiment run."""

    def __init__(self, spec: ExperimentSpec, out_dir):
        self.spec = spec
        self.out = Path(out_dir)
        for sub in ("data", "models", "predictions"):
            (self.out / sub).mkdir(parents=True, exist_ok=True)
        self.hashes: dict[str, str] = {}
        self.rows: list[list] = []     # long-format results
        self.started = time.perf_counter()

    def dataset(self, name: str, make) -> tuple[Dataset, str]:
        path = self.out / "data" / f"{name}.jsonl"
        ds = make()
        write_dataset(ds, path)
        self.hashes[name] = file_sha256(path)
        log.info("dataset %s: %d records", name, ds.n_records)
        return ds, self.hashes[name]

    def record(self, model_name, model, seed, train_name, test_name, ds, dataset_hash, split=TEST, **extra):
        tag = "-".join(str(x) for x in (model_name.replace("*", "star"), train_name, test_name, f"s{seed}") + tuple(
            f"{k}{v}" for k, v in extra.items()))
        save_model(model, self.out / "models" / f"{tag}.json")
        report, preds = evaluate(model, ds, dataset_hash, split)
        parts = ds.only(split).variants if split else ds.variants
        width = self.spec.pad_to or max(v.n for v in parts)
        write_predictions(self.out / "predictions" / f"{tag}.csv", preds, parts, width)
        self.rows.append(dict(model=model_name, train=train_name, test=test_name, seed=seed,
                              p=report.p, q=report.q, count=report.count, model_hash=report.model_hash,
                              dataset_hash=dataset_hash, predictions=f"predictions/{tag}.csv",
                              dataset=f"data/{test_name}.jsonl", split=split or "all", **extra))
        log.info("%s: P %.3e Q %.3e", tag, report.p, report.q)
        return report

    def write_long(self, name="results.csv", extra_cols=()):
        cols = ["model", "train", "test", *extra_cols, "seed", "p_rmse", "q_rmse", "count", "model_sha256",
                "dataset_sha256", "split", "dataset", "predictions"]
        rows = [[r["model"], r["train"], r["test"], *[r[c] for c in extra_cols], r["seed"], repr(r["p"]),
                 repr(r["q"]), r["count"], r["model_hash"], r["dataset_hash"], r["split"], r["dataset"],
                 r["predictions"]] for r in self.rows]
        (self.out / name).write_text(_csv_text(cols, rows))

    def write_manifest(self, **extra):
        doc = dict(spec=self.spec.to_dict(), dataset_sha256=self.hashes,
                   spread="population standard deviation over training seeds", **extra)
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str))

    def aggregate(self, **match) -> RmseReport:
        rows = [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]
        return aggregate(RmseReport(r["p"], r["q"], r["count"], model_hash=r["model_hash"],
                                    dataset_hash=r["dataset_hash"]) for r in rows)


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def _fmt(mean: float, spread: float) -> str:
    return f"{mean:.3e} ± {spread:.1e}"


def _gat(spec: ExperimentSpec, seed: int) -> GatModel:
    return GatModel.init(spec.gat_layers, spec.gat_hidden, seed=seed)


# --------------------------------------------------------------------------
# experiment 1: accuracy on fixed topologies

@dataclass
class Experiment1Result:
    table: dict          # (case, quantity) -> {model: (mean, spread)}
    reports: dict        # (model, case) -> RmseReport aggregated over seeds
    out_dir: Path


def run_experiment1(spec: ExperimentSpec, out_dir) -> Experiment1Result:
    """Per-case baselines and GAT*, plus one GAT trained on all cases combined."""
    spec = spec.scaled()
    run = _Run(spec, out_dir)
    cfg = SamplerConfig(seed=spec.data_seed)
    data = {}
    for name in spec.base_cases:
        case = resolve_case(name)
        n = spec.n_instances.get(name, DESK_E1.get(name, 2000))
        data[name] = run.dataset(name, lambda: generate_dataset(case, 1, n, cfg))

    for seed in spec.seeds:
        for name, (ds, h) in data.items():
            v = ds.variants[0]
            if "MLP" in spec.models:
                m, _ = train_baseline(MlpModel.init(v.n, seed=seed), ds, _seeded(spec.mlp_train, seed))
                run.record("MLP", m, seed, name, name, ds, h)
            if "TPBNN" in spec.models:
                m, _ = train_baseline(TpbnnModel.init(v.n, v.edge_list, seed=seed), ds,
                                      _seeded(spec.tpbnn_train, seed))
                run.record("TPBNN", m, seed, name, name, ds, h)
            if "GAT*" in spec.models:
                m, _ = train(_gat(spec, seed), ds, _seeded(spec.gat_train, seed))
                run.record("GAT*", m, seed, name, name, ds, h)
        if "GAT" in spec.models and data:
            combined = sum((ds for ds, _ in list(data.values())[1:]), list(data.values())[0][0])
            m, _ = train(_gat(spec, seed), combined, _seeded(spec.gat_train, seed))
            for name, (ds, h) in data.items():
                run.record("GAT", m, seed, "combined", name, ds, h)

    table, reports = {}, {}
    models = [m for m in MODELS if m in spec.models]
    for name in data:
        for model in models:
            reports[(model, name)] = run.aggregate(model=model, test=name)
        for qty in ("P", "Q"):
            table[(name, qty)] = {m: ((reports[(m, name)].p, reports[(m, name)].p_spread) if qty == "P" else
                                      (reports[(m, name)].q, reports[(m, name)].q_spread)) for m in models}
    seeds = " ".join(map(str, spec.seeds))
    rows = [[name, qty, *[_fmt(*table[(name, qty)][m]) for m in models], seeds, run.hashes[name]]
            for name in data for qty in ("P", "Q")]
    (run.out / "table1.csv").write_text(_csv_text(["case", "quantity", *models, "seeds", "dataset_sha256"], rows))
    run.write_long()
    run.write_manifest()
    return Experiment1Result(table, reports, run.out)


# --------------------------------------------------------------------------
# experiment 2: removed branches

@dataclass
class Experiment2Result:
    curve: dict          # (model, removed) -> RmseReport aggregated over seeds
    out_dir: Path


def run_experiment2(spec: ExperimentSpec, out_dir) -> Experiment2Result:
    """GAT on a multi-topology corpus vs baselines on the base topology, tested on reduced networks."""
    spec = spec.scaled()
    base = resolve_case(spec.base_cases[0])
    check_removals(base, spec.removal_counts)
    run = _Run(spec, out_dir)
    cfg = SamplerConfig(seed=spec.data_seed)
    gat_data, gat_hash = run.dataset(f"{base.case_id}-variants", lambda: generate_dataset(
        base, spec.n_variants, spec.variant_instances, cfg))
    fixed_data, fixed_hash = run.dataset(f"{base.case_id}-base", lambda: generate_dataset(
        base, 1, spec.baseline_instances, cfg))
    v0 = fixed_data.variants[0]

    for seed in spec.seeds:
        trained = {}
        if "GAT" in spec.models:
            trained["GAT"] = train(_gat(spec, seed), gat_data, _seeded(spec.gat_train, seed))[0]
        if "MLP" in spec.models:
            trained["MLP"] = train_baseline(MlpModel.init(v0.n, seed=seed), fixed_data,
                                            _seeded(spec.mlp_train, seed))[0]
        if "TPBNN" in spec.models:
            trained["TPBNN"] = train_baseline(TpbnnModel.init(v0.n, v0.edge_list, seed=seed), fixed_data,
                                              _seeded(spec.tpbnn_train, seed))[0]
        for removed in spec.removal_counts:
            name = f"{base.case_id}-r{removed}-s{seed}"
            ds, h = run.dataset(name, lambda: _reduced_corpus(base, removed, seed, spec))
            for model_name, m in trained.items():
                run.record(model_name, m, seed, base.case_id, name, ds, h, split=None, removed=removed)

    curve = {(m, r): run.aggregate(model=m, removed=r) for m in trained for r in spec.removal_counts}
    seeds = " ".join(map(str, spec.seeds))
    rows = [[r, m, repr(curve[(m, r)].p), repr(curve[(m, r)].p_spread), repr(curve[(m, r)].q),
             repr(curve[(m, r)].q_spread), seeds, gat_hash if m == "GAT" else fixed_hash]
            for m in trained for r in spec.removal_counts]
    (run.out / "removal_curve.csv").write_text(_csv_text(
        ["removed", "model", "p_rmse", "p_spread", "q_rmse", "q_spread", "seeds", "train_dataset_sha256"], rows))
    write_curve_svg(run.out / "removal_curve.svg", spec.removal_counts,
                    {m: [curve[(m, r)].p for r in spec.removal_counts] for m in trained},
                    title=f"Rebuilt PF RMSE (P) vs removed branches, {base.case_id}",
                    xlabel="removed branches", ylabel="P RMSE (p.u.)")
    run.write_long(extra_cols=("removed",))
    run.write_manifest(train_datasets={"GAT": gat_hash, "baselines": fixed_hash})
    return Experiment2Result(curve, run.out)


def _reduced_corpus(base: PowerCase, removed: int, seed: int, spec: ExperimentSpec) -> Dataset:
    """Test instances on a connected reduced topology; redraws removals if NR yield is too low."""
    cfg = SamplerConfig(seed=spec.data_seed + 1000 * (seed + 1) + removed)
    last = None
    for attempt in range(REMOVAL_DRAWS):
        reduced = remove_branches(base, removed, rng_for(spec.data_seed, _REMOVAL, seed, removed, attempt))
        try:
            ds = generate_dataset(reduced, 1, spec.test_instances, cfg)
        except YieldTooLow as err:
            last = err
            continue
        log.info("%s: solvable topology after %d removal draws", reduced.case_id, attempt + 1)
        return ds
    raise last


def write_curve_svg(path, xs, series: dict, title="", xlabel="", ylabel="") -> Path:
    """Line chart with one series per model, deterministic SVG output."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "gatpf"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ys in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return Path(path)


# --------------------------------------------------------------------------
# experiment 3: unseen network sizes

@dataclass
class Experiment3Result:
    grid: dict           # (train case, test case) -> RmseReport aggregated over seeds
    in_distribution: dict  # train case -> RmseReport on its own test split
    out_dir: Path


def run_experiment3(spec: ExperimentSpec, out_dir) -> Experiment3Result:
    """Train one GAT per training base and evaluate it on every unseen base."""
    spec = spec.scaled()
    run = _Run(spec, out_dir)
    cfg = SamplerConfig(seed=spec.data_seed)
    train_data = {name: run.dataset(name, lambda: generate_dataset(resolve_case(name), spec.n_variants,
                                                                    spec.variant_instances, cfg))
                  for name in spec.train_cases}
    test_data = {name: run.dataset(f"{name}-test", lambda: generate_dataset(
        resolve_case(name), spec.test_variants, spec.test_instances, replace(cfg, seed=spec.data_seed + 1)))
                 for name in spec.test_cases}

    for seed in spec.seeds:
        for tname, (ds, h) in train_data.items():
            m, _ = train(_gat(spec, seed), ds, _seeded(spec.gat_train, seed))
            run.record("GAT", m, seed, tname, tname, ds, h)
            for ename, (eds, eh) in test_data.items():
                run.record("GAT", m, seed, tname, f"{ename}-test", eds, eh, split=None)

    grid = {(t, e): run.aggregate(train=t, test=f"{e}-test") for t in train_data for e in test_data}
    own = {t: run.aggregate(train=t, test=t) for t in train_data}
    seeds = " ".join(map(str, spec.seeds))
    substitutes = {"case300": "stands in for the non-public 154-bus case"}
    rows = []
    for t in train_data:
        for e in test_data:
            r = grid[(t, e)]
            rows.append([t, e, repr(r.p), repr(r.p_spread), repr(r.q), repr(r.q_spread), repr(own[t].p),
                         seeds, train_data[t][1], test_data[e][1], substitutes.get(e, "")])
    (run.out / "cross_size.csv").write_text(_csv_text(
        ["train_case", "test_case", "p_rmse", "p_spread", "q_rmse", "q_spread", "in_distribution_p_rmse",
         "seeds", "train_dataset_sha256", "test_dataset_sha256", "note"], rows))
    run.write_long()
    run.write_manifest(substitutions={e: substitutes[e] for e in test_data if e in substitutes})
    return Experiment3Result(grid, own, run.out)


# --------------------------------------------------------------------------
# audit

def audit_results(out_dir) -> dict:
    """Recompute every RMSE in ``results.csv`` from the persisted predictions and datasets."""
    out = Path(out_dir)
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    cache = {}
    mismatches = []
    for r in rows:
        if r["dataset"] not in cache:
            cache[r["dataset"]] = read_dataset(out / r["dataset"])
        ds = cache[r["dataset"]]
        parts = ds.only(r["split"]).variants if r["split"] != "all" else ds.variants
        p_hat, q_hat = read_predictions(out / r["predictions"])
        p = np.concatenate([v.p.ravel() for v in parts])
        q = np.concatenate([v.q.ravel() for v in parts])
        rp = rmse_value(np.concatenate(p_hat), p)
        rq = rmse_value(np.concatenate(q_hat), q)
        if repr(rp) != r["p_rmse"] or repr(rq) != r["q_rmse"]:
            mismatches.append((r["predictions"], r["p_rmse"], repr(rp), r["q_rmse"], repr(rq)))
    return dict(rows=len(rows), mismatches=mismatches, passed=not mismatches and bool(rows))
