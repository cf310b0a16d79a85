"""JSON checkpoints: metadata plus named, shaped flat parameter arrays."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import atomic_write_text
from .model import EvaluatorModel, NormStats

FORMAT = "neme-evaluator"
VERSION = 1


class CheckpointError(ValueError):
    pass


def model_to_dict(model: EvaluatorModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "meta": {"D": model.D, "h": model.h, "layers": model.layers, "K": model.K, "L": model.L, **model.meta},
        "norm_stats": {"mean": model.norm_stats.mean.tolist(), "std": model.norm_stats.std.tolist()},
        "params": {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(model.params.items())
        },
    }


def model_from_dict(d: dict) -> EvaluatorModel:
    if d.get("format") != FORMAT:
        raise CheckpointError(f"not an evaluator checkpoint (format={d.get('format')!r})")
    meta = dict(d["meta"])
    D, h, layers, K, L = (meta.pop(k) for k in ("D", "h", "layers", "K", "L"))
    params = {}
    for k, blk in d["params"].items():
        data = np.asarray(blk["data"], dtype=np.float64)
        shape = tuple(blk["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"{k}: {data.size} values do not fill shape {shape}")
        params[k] = data.reshape(shape)
    ns = d["norm_stats"]
    return EvaluatorModel(D=D, h=h, layers=layers, K=K, params=params,
                          norm_stats=NormStats(ns["mean"], ns["std"]), L=L, meta=meta)


def save_checkpoint(path, model: EvaluatorModel) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def load_checkpoint(path) -> EvaluatorModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        return model_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc!r})") from None
