"""Versioned JSON checkpoints.

Floats are written with ``repr`` (shortest round-trip form), so a
save/load cycle reproduces every weight bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .constitutive import BulkProps, CzmProps
from .network import LayerSizes, NetworkParams
from .training import AdamState, Checkpoint, TrainConfig

CHECKPOINT_FORMAT = "prnn-checkpoint"
CHECKPOINT_VERSION = 1


def _matrix(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def _unmatrix(m):
    return np.array(m["data"], dtype=float).reshape(m["shape"])


def params_to_dict(p: NetworkParams):
    return {
        "architecture": p.architecture,
        "layer_sizes": {"n_bulk": p.n_bulk, "n_cohesive": p.n_cohesive},
        "cohesive_mode": p.cohesive_mode,
        "init_seed": p.init_seed,
        "bulk_props": asdict(p.bulk_props),
        "czm_props": asdict(p.czm_props),
        "weights": {k: _matrix(v) for k, v in p.trainable().items()},
    }


def params_from_dict(d):
    w = {k: _unmatrix(v) for k, v in d["weights"].items()}
    return NetworkParams(
        d["architecture"],
        LayerSizes(d["layer_sizes"]["n_bulk"], d["layer_sizes"]["n_cohesive"]),
        w["W1"], w["W2"], w.get("Wd"), w.get("act_w"), w.get("act_b"),
        d.get("cohesive_mode", "linear"),
        BulkProps(**d["bulk_props"]), CzmProps(**d["czm_props"]), d.get("init_seed"),
    )


def checkpoint_to_dict(ck: Checkpoint):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "network": params_to_dict(ck.params),
        "optimizer": {
            "step": ck.optimizer.step,
            "m": {k: _matrix(v) for k, v in ck.optimizer.m.items()},
            "v": {k: _matrix(v) for k, v in ck.optimizer.v.items()},
        },
        "train_config": asdict(ck.config),
        "epoch": ck.epoch,
        "best_val_mse": ck.best_val_mse,
        "rng_seed": ck.rng_seed,
    }


def checkpoint_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format')!r} v{d.get('version')}")
    opt = d["optimizer"]
    return Checkpoint(
        params_from_dict(d["network"]),
        AdamState(opt["step"], {k: _unmatrix(v) for k, v in opt["m"].items()},
                  {k: _unmatrix(v) for k, v in opt["v"].items()}),
        TrainConfig(**d["train_config"]),
        d["epoch"],
        d["best_val_mse"],
        d["rng_seed"],
    )


def dumps_checkpoint(ck: Checkpoint) -> str:
    return json.dumps(checkpoint_to_dict(ck), sort_keys=True, indent=1) + "\n"


def loads_checkpoint(text: str) -> Checkpoint:
    return checkpoint_from_dict(json.loads(text))


def atomic_write(path, text):
    """Write to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ck: Checkpoint, path):
    atomic_write(path, dumps_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        return loads_checkpoint(fh.read())
