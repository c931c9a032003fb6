"""Command line front end: ``gatpf <subcommand> ...``.

Results go to files or stdout as JSON. Library errors exit with status 2 and
print ``{"error": <code>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .baselines import MlpModel, TpbnnModel, train_baseline
from .datagen import SamplerConfig, file_sha256, generate_dataset, read_dataset, write_dataset
from .errors import GatpfError, NonConvergence
from .evaluation import (Experiment, ExperimentSpec, evaluate, resolve_case, run_experiment1, run_experiment2,
                         run_experiment3)
from .gat import GatModel, train
from .powerflow import SolverOptions, Start, solve_nr, write_trace
from .serialization import load_model, model_hash, save_model
from .training import LossTarget, TrainConfig


def _emit(doc) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def cmd_gen(args):
    base = resolve_case(args.base)
    ds = generate_dataset(base, args.variants, args.instances, SamplerConfig(seed=args.seed), workers=args.workers)
    write_dataset(ds, args.out)
    _emit(dict(out=str(args.out), records=ds.n_records, variants=len(ds.variants), sha256=file_sha256(args.out)))


def cmd_solve(args):
    case = resolve_case(args.case)
    opts = SolverOptions(tol=args.tol, max_iter=args.max_iter, start=Start(args.start))
    try:
        sol = solve_nr(case, opts)
    except NonConvergence as err:
        if args.trace:
            write_trace(err.trace, args.trace)
        raise
    if args.trace:
        write_trace(sol.trace, args.trace)
    _emit(dict(case_id=case.case_id, iterations=sol.iterations, max_mismatch=sol.max_mismatch,
               mu=sol.mu.tolist(), omega=sol.omega.tolist(), p=sol.p.tolist(), q=sol.q.tolist()))


def cmd_train(args):
    needs_params = args.loss_target == LossTarget.CURRENT.value
    ds = read_dataset(args.data, with_params=needs_params)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                      lr_decay=args.lr_decay, loss_target=LossTarget(args.loss_target))
    if args.model == "gat":
        model, hist = train(GatModel.init(args.layers, args.hidden, seed=args.seed), ds, cfg)
    else:
        v = ds.variants[0]
        init = MlpModel.init(v.n, seed=args.seed) if args.model == "mlp" else TpbnnModel.init(v.n, v.edge_list,
                                                                                            seed=args.seed)
        model, hist = train_baseline(init, ds, cfg)
    model.metadata["dataset_sha256"] = file_sha256(args.data)
    save_model(model, args.out)
    _emit(dict(out=str(args.out), model_sha256=model_hash(model), best_epoch=hist.best_epoch,
               final_train_loss=hist.train_loss[-1], best_val_loss=min(hist.val_loss) if hist.val_loss else None))


def cmd_eval(args):
    model = load_model(args.model)
    ds = read_dataset(args.data)
    split = None if args.split == "all" else args.split
    report, _ = evaluate(model, ds, file_sha256(args.data), split)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "rmse", "count", "split", "model_sha256", "dataset_sha256"])
        w.writerow(["P", repr(report.p), report.count, args.split, report.model_hash, report.dataset_hash])
        w.writerow(["Q", repr(report.q), report.count, args.split, report.model_hash, report.dataset_hash])
    _emit(dict(out=str(args.out), p_rmse=report.p, q_rmse=report.q, count=report.count))


def _experiment(kind: Experiment, runner):
    def run(args):
        spec = ExperimentSpec.load(args.spec) if args.spec else ExperimentSpec.default(kind)
        if Experiment(spec.experiment) != kind:
            raise GatpfError(f"spec is for {spec.experiment.value}, not {kind.value}")
        spec.full_scale = spec.full_scale or args.full_scale
        runner(spec, args.out_dir)
        _emit(dict(out_dir=str(args.out_dir), experiment=kind.value))
    return run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gatpf", description="Rebuild AC power flow models with graph attention.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a solved dataset")
    p.add_argument("--base", required=True, help="MATPOWER file or bundled case name")
    p.add_argument("--variants", type=int, default=1)
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run Newton-Raphson on one case")
    p.add_argument("--case", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--start", choices=[s.value for s in Start], default=Start.FLAT.value)
    p.add_argument("--trace", type=Path)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", choices=["gat", "mlp", "tpbnn"], default="gat")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=1.0)
    p.add_argument("--loss-target", choices=[t.value for t in LossTarget], default=LossTarget.POWER.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="RMSE of a saved model on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    for name, kind, runner in (("exp1", Experiment.E1_ACCURACY, run_experiment1),
                               ("exp2", Experiment.E2_BROKEN_BRANCH, run_experiment2),
                               ("exp3", Experiment.E3_CROSS_SIZE, run_experiment3)):
        p = sub.add_parser(name, help=f"run {kind.value}")
        p.add_argument("--spec", type=Path, help="JSON experiment spec (defaults if omitted)")
        p.add_argument("--out-dir", type=Path, required=True)
        p.add_argument("--full-scale", action="store_true", help="use the paper's dataset sizes")
        p.set_defaults(func=_experiment(kind, runner))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except GatpfError as err:
        print(json.dumps({"error": err.code, "message": str(err)}), file=sys.stderr)
        return 2
    except (OSError, KeyError, ValueError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
