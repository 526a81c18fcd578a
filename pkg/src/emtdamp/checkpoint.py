"""Versioned JSON checkpoints.  Floats are written with repr, so round trips are bit-exact."""
from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .network import NetHyper
from .prior import BGGroups

FORMAT = "emtdamp-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _groups_to_dict(g: BGGroups) -> dict:
    return {"rho": g.rho.tolist(), "mu": g.mu.tolist(), "var": g.var.tolist()}


def _groups_from_dict(d: dict) -> BGGroups:
    return BGGroups(np.array(d["rho"], dtype=float), np.array(d["mu"], dtype=float), np.array(d["var"], dtype=float))


def hyper_to_dict(h: NetHyper) -> dict:
    return {
        "sizes": list(h.sizes),
        "task": h.task,
        "noise_var": float(h.noise_var),
        "weights": [_groups_to_dict(g) for g in h.weights],
        "biases": [_groups_to_dict(g) for g in h.biases],
    }


def hyper_from_dict(d: dict) -> NetHyper:
    return NetHyper(
        tuple(d["sizes"]),
        d["task"],
        [_groups_from_dict(g) for g in d["weights"]],
        [_groups_from_dict(g) for g in d["biases"]],
        float(d["noise_var"]),
    )


def dumps(h: NetHyper, iteration: int = 0, policy=None, config: dict | None = None, extra: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "iteration": int(iteration),
        "hyper": hyper_to_dict(h),
        "policy": asdict(policy) if policy is not None else None,
        "config": config or {},
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc)


def loads(text: str) -> dict:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    doc["hyper"] = hyper_from_dict(doc["hyper"])
    return doc


def save(path, h: NetHyper, iteration: int = 0, policy=None, config: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps(h, iteration, policy, config, extra), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load(path) -> dict:
    return loads(Path(path).read_text(encoding="utf-8"))
