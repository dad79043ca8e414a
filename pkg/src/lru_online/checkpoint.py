"""Canonical text checkpoints.

The file is JSON with sorted keys; floats round-trip exactly through
Python's shortest-representation repr, so save -> load -> save is
byte-identical and reloaded networks predict bitwise-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import FittedPipeline
from .errors import CheckpointError
from .lru import PARAM_BLOCKS
from .optim import AdamState, Tree

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: Tree
    pipeline: FittedPipeline | None = None
    optimizer: AdamState | None = None
    config: dict = field(default_factory=dict)
    seed: int = 0
    provenance: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _tree_to_jsonable(tree: Tree) -> list:
    return [{k: np.asarray(layer[k], dtype=np.float64).tolist()
             for k in PARAM_BLOCKS} for layer in tree]


def _tree_from_jsonable(obj: list) -> Tree:
    return [{k: np.asarray(layer[k], dtype=np.float64) for k in PARAM_BLOCKS}
            for layer in obj]


def _optimizer_to_jsonable(state: AdamState | None) -> dict | None:
    if state is None:
        return None
    return {"m": _tree_to_jsonable(state.m), "v": _tree_to_jsonable(state.v),
            "t": state.t, "lr": state.lr, "beta1": state.beta1,
            "beta2": state.beta2, "eps": state.eps}


def _optimizer_from_jsonable(obj: dict | None) -> AdamState | None:
    if obj is None:
        return None
    return AdamState(m=_tree_from_jsonable(obj["m"]),
                     v=_tree_from_jsonable(obj["v"]),
                     t=obj["t"], lr=obj["lr"], beta1=obj["beta1"],
                     beta2=obj["beta2"], eps=obj["eps"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format": "lru-online-checkpoint",
        "version": ckpt.version,
        "seed": ckpt.seed,
        "config": ckpt.config,
        "provenance": ckpt.provenance,
        "params": _tree_to_jsonable(ckpt.params),
        "optimizer": _optimizer_to_jsonable(ckpt.optimizer),
        "pipeline": ckpt.pipeline.to_dict() if ckpt.pipeline else None,
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(
            f"{path}: corrupted checkpoint, parse error at byte {e.pos}: {e.msg}")
    if not isinstance(doc, dict) or doc.get("format") != "lru-online-checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {doc.get('version')!r}; "
            f"this build reads version {FORMAT_VERSION}")
    return Checkpoint(
        params=_tree_from_jsonable(doc["params"]),
        pipeline=(FittedPipeline.from_dict(doc["pipeline"])
                  if doc.get("pipeline") else None),
        optimizer=_optimizer_from_jsonable(doc.get("optimizer")),
        config=doc.get("config", {}),
        seed=doc.get("seed", 0),
        provenance=doc.get("provenance", {}),
        version=doc["version"],
    )
