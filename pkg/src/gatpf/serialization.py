"""Versioned JSON model files.

Arrays are stored as base64 of little-endian float64 bytes plus a shape, so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .baselines import MlpModel, TpbnnModel
from .errors import FormatError
from .gat import Activation, GatLayerParams, GatModel

FORMAT_VERSION = 1


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(float).reshape(d["shape"])


def model_to_dict(model) -> dict:
    if isinstance(model, GatModel):
        arch = {"layers": [{"d": l.d_in, "d_out": l.d_out, "slope": l.leaky_slope,
                            "activation": l.activation.value} for l in model.layers]}
        params = [{"W": encode_array(l.W), "a": encode_array(l.a), "bias": encode_array(l.bias)}
                  for l in model.layers]
        kind = "GAT"
    elif isinstance(model, MlpModel):
        arch = {"sizes": model.sizes, "activation": "elu"}
        params = [{"W": encode_array(w), "b": encode_array(b)} for w, b in zip(model.weights, model.biases)]
        kind = "MLP"
    elif isinstance(model, TpbnnModel):
        arch = {"n_bus": model.n_bus, "edge_list": [list(e) for e in model.edge_list]}
        params = {"coef_p": encode_array(model.coef_p), "coef_q": encode_array(model.coef_q)}
        kind = "TPBNN"
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {"format_version": FORMAT_VERSION, "model_kind": kind, "arch": arch, "params": params,
            "training_meta": model.metadata}


def model_from_dict(doc: dict):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    kind = doc.get("model_kind", "GAT")
    meta = doc.get("training_meta", {})
    arch, params = doc["arch"], doc["params"]
    if kind == "GAT":
        layers = [GatLayerParams(W=decode_array(p["W"]), a=decode_array(p["a"]),
                                 bias=decode_array(p["bias"]) if "bias" in p else None,
                                 leaky_slope=spec["slope"], activation=Activation(spec["activation"]))
                  for spec, p in zip(arch["layers"], params)]
        return GatModel(layers, meta)
    if kind == "MLP":
        return MlpModel([decode_array(p["W"]) for p in params], [decode_array(p["b"]) for p in params], meta)
    if kind == "TPBNN":
        return TpbnnModel(arch["n_bus"], [tuple(e) for e in arch["edge_list"]],
                          decode_array(params["coef_p"]), decode_array(params["coef_q"]), meta)
    raise FormatError(f"unknown model_kind {kind!r}")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True, default=_jsonable))
    return path


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def model_hash(model) -> str:
    doc = model_to_dict(model)
    doc.pop("training_meta", None)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)
