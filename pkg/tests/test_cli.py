"""Command line subcommands, driven through ``main(argv)``."""

import csv
import json
import subprocess
import sys

import pytest

from gatpf.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--case", "case14", "--trace", tmp_path / "t.csv")
    doc = json.loads(out)
    assert code == 0 and doc["max_mismatch"] <= 1e-8 and len(doc["p"]) == 14
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,max_mismatch"


def test_solve_failure_is_machine_readable(capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--case", "case30", "--max-iter", "1", "--trace", tmp_path / "t.csv")
    assert code == 2 and json.loads(err)["error"] == "non_convergence"
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 3


def test_bad_case_file(capsys, tmp_path):
    bad = tmp_path / "bad.m"
    bad.write_text("function mpc = bad\nmpc.bus = [\n 1 3 0;\n];\n")
    code, _, err = run(capsys, "solve", "--case", bad)
    assert code == 2 and json.loads(err)["error"] in {"syntax_error", "validation_error"}


def test_gen_train_eval_pipeline(capsys, tmp_path):
    data = tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "gen", "--base", "case9", "--instances", 30, "--seed", 3, "--out", data)
    assert code == 0 and json.loads(out)["records"] == 30
    for kind in ("gat", "mlp", "tpbnn"):
        model = tmp_path / f"{kind}.json"
        code, out, _ = run(capsys, "train", "--data", data, "--model", kind, "--layers", 2, "--hidden", 4,
                           "--epochs", 2, "--batch-size", 8, "--out", model)
        assert code == 0 and model.exists()
        code, out, _ = run(capsys, "eval", "--model", model, "--data", data, "--out", tmp_path / f"{kind}.csv")
        assert code == 0
        with open(tmp_path / f"{kind}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["quantity"] for r in rows] == ["P", "Q"] and float(rows[0]["rmse"]) >= 0


def test_size_mismatch_exit_code(capsys, tmp_path):
    d9, d14 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run(capsys, "gen", "--base", "case9", "--instances", 10, "--out", d9)
    run(capsys, "gen", "--base", "case14", "--instances", 10, "--out", d14)
    run(capsys, "train", "--data", d9, "--model", "mlp", "--epochs", 1, "--out", tmp_path / "m.json")
    code, _, err = run(capsys, "eval", "--model", tmp_path / "m.json", "--data", d14, "--out", tmp_path / "e.csv")
    assert code == 2 and json.loads(err)["error"] == "dimension_mismatch"


def test_empty_generation_rejected(capsys, tmp_path):
    code, _, err = run(capsys, "gen", "--base", "case9", "--instances", 0, "--out", tmp_path / "x.jsonl")
    assert code == 2 and json.loads(err)["error"] == "empty"


def test_experiment_with_spec(capsys, tmp_path):
    spec = tmp_path / "spec.json"
    fast = {"epochs": 1, "batch_size": 16}
    spec.write_text(json.dumps({"experiment": "E1_ACCURACY", "base_cases": ["case9"], "n_instances": {"case9": 20},
                                "seeds": [0], "gat_layers": 2, "gat_hidden": 4, "gat_train": fast,
                                "mlp_train": fast, "tpbnn_train": fast}))
    code, _, _ = run(capsys, "exp1", "--spec", spec, "--out-dir", tmp_path / "out")
    assert code == 0 and (tmp_path / "out" / "table1.csv").exists()
    code, _, err = run(capsys, "exp2", "--spec", spec, "--out-dir", tmp_path / "out2")
    assert code == 2 and "error" in json.loads(err)


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "gatpf.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("gen", "solve", "train", "eval", "exp1", "exp2", "exp3"):
        assert sub in res.stdout
