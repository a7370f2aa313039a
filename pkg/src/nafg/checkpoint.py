"""Versioned JSON checkpoints.

Floats are written with their shortest round-trip repr, so loading a
checkpoint reproduces every array bit for bit and saving the same model
twice gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .finegray import BaselineCif
from .ingest import PreprocessPlan
from .nam import PROJ_EPS, ModelParams

FORMAT = "nafg-checkpoint"
VERSION = 1


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unpack(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def to_dict(params: ModelParams, baseline: BaselineCif | None = None,
            plan: PreprocessPlan | None = None, extra: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "hyper": {"p": params.p, "K": params.K, "widths": list(params.widths),
                  "dropout": params.dropout, "feature_dropout": params.feature_dropout,
                  "batch_norm": params.batch_norm, "proj_eps": PROJ_EPS},
        "arrays": {k: _pack(v) for k, v in params.arrays.items()},
        "bn_stats": {k: _pack(v) for k, v in params.bn_stats.items()},
        "baseline": None if baseline is None else baseline.to_dict(),
        "plan": None if plan is None else plan.to_dict(),
        "extra": extra or {},
    }


def save(path, params, baseline=None, plan=None, extra=None) -> None:
    text = json.dumps(to_dict(params, baseline, plan, extra), sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def load(path):
    """Returns ``(params, baseline, plan, extra)``."""
    d = json.loads(Path(path).read_text())
    if d.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if d.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {d.get('version')}")
    h = d["hyper"]
    params = ModelParams(p=h["p"], K=h["K"], widths=tuple(h["widths"]),
                         arrays={k: _unpack(v) for k, v in d["arrays"].items()},
                         dropout=h["dropout"], feature_dropout=h["feature_dropout"],
                         batch_norm=h["batch_norm"],
                         bn_stats={k: _unpack(v) for k, v in d["bn_stats"].items()})
    baseline = None if d["baseline"] is None else BaselineCif.from_dict(d["baseline"])
    plan = None if d["plan"] is None else PreprocessPlan.from_dict(d["plan"])
    return params, baseline, plan, d.get("extra", {})
