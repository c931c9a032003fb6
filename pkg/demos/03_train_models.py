"""Train a GAT and the two fixed-topology baselines on a small IEEE 14 corpus.

The GAT is then applied unchanged to IEEE 9 and IEEE 30, which the baselines
cannot accept at all.

    python demos/03_train_models.py
"""
import numpy as np

from gatpf.baselines import MlpModel, TpbnnModel, mlp_forward, train_baseline
from gatpf.case import load_bundled
from gatpf.datagen import SamplerConfig, generate_dataset
from gatpf.errors import DimensionMismatch
from gatpf.evaluation import evaluate
from gatpf.gat import GatModel, train
from gatpf.training import TrainConfig

base = load_bundled("case14")
fixed = generate_dataset(base, 1, 600, SamplerConfig(seed=0))
variants = generate_dataset(base, 6, 100, SamplerConfig(seed=0))
print(f"fixed-topology corpus {fixed.n_records} records, variant corpus {variants.n_records} records")

gat, hist = train(GatModel.init(3, 32, seed=0), variants, TrainConfig(epochs=20, batch_size=32, learning_rate=1e-3))
print(f"GAT: {sum(p.size for p in gat.parameters())} parameters, best epoch {hist.best_epoch}")
print("  train loss by epoch:", " ".join(f"{x:.3g}" for x in hist.train_loss[::4]))

mlp, _ = train_baseline(MlpModel.init(14, seed=0), fixed, TrainConfig(epochs=100, learning_rate=1e-3))
tp, _ = train_baseline(TpbnnModel.init(14, fixed.variants[0].edge_list), fixed,
                       TrainConfig(epochs=400, learning_rate=3e-2, lr_decay=0.995))

for label, model in (("GAT", gat), ("MLP", mlp), ("TPBNN", tp)):
    r, _ = evaluate(model, fixed)
    print(f"{label:6s} test RMSE on the base topology: P {r.p:.3e}  Q {r.q:.3e}")

for other in ("case9", "case30"):
    ds = generate_dataset(load_bundled(other), 1, 50, SamplerConfig(seed=5))
    r, _ = evaluate(gat, ds, split=None)
    print(f"GAT on {other} (never seen): P {r.p:.3e}  Q {r.q:.3e}")
    try:
        mlp_forward(mlp, ds.variants[0].mu, ds.variants[0].omega)
    except DimensionMismatch as err:
        print(f"  MLP refuses: {err}")

# two reference floors: one constant for every bus (all a bus-agnostic model gets
# for free) and a per-bus constant (needs bus identity, which only the baselines see)
v = fixed.variants[0]
tr, te = v.only("train"), v.only("test")
print("single constant predictor:  P", np.sqrt(np.mean((te.p - tr.p.mean()) ** 2)).round(4))
print("per-bus constant predictor: P", np.sqrt(np.mean((te.p - tr.p.mean(0)) ** 2)).round(4))
