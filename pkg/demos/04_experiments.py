"""Run reduced versions of the three experiments and print their tables.

Sizes here are tiny so the whole script runs in a few minutes; the CLI
(``gatpf exp1|exp2|exp3``) runs the desk-scale defaults.

    python demos/04_experiments.py [out_dir]
"""
import sys
from pathlib import Path

from gatpf.evaluation import ExperimentSpec, audit_results, run_experiment1, run_experiment2, run_experiment3

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_experiments")
quick = dict(seeds=[0, 1], gat_train=dict(epochs=10, batch_size=32, learning_rate=1e-3),
             mlp_train=dict(epochs=60, batch_size=32, learning_rate=1e-3),
             tpbnn_train=dict(epochs=200, batch_size=32, learning_rate=3e-2, lr_decay=0.99))

e1 = run_experiment1(ExperimentSpec.from_dict(dict(experiment="E1_ACCURACY", base_cases=["case14", "case30"],
                                                   n_instances={"case14": 300, "case30": 300}, **quick)),
                     out / "e1")
print((e1.out_dir / "table1.csv").read_text())

e2 = run_experiment2(ExperimentSpec.from_dict(dict(experiment="E2_BROKEN_BRANCH", base_cases=["case14"],
                                                   removal_counts=[0, 2, 4, 6], n_variants=5, variant_instances=60,
                                                   baseline_instances=300, test_instances=50, **quick)),
                     out / "e2")
print((e2.out_dir / "removal_curve.csv").read_text())
print("chart:", e2.out_dir / "removal_curve.svg")

e3 = run_experiment3(ExperimentSpec.from_dict(dict(experiment="E3_CROSS_SIZE", train_cases=["case14", "case30"],
                                                   test_cases=["case9", "case57"], n_variants=4,
                                                   variant_instances=60, test_variants=2, test_instances=30,
                                                   **quick)),
                     out / "e3")
print((e3.out_dir / "cross_size.csv").read_text())

for d in (e1.out_dir, e2.out_dir, e3.out_dir):
    report = audit_results(d)
    print(f"{d}: {report['rows']} RMSE rows recomputed from prediction files, passed={report['passed']}")
