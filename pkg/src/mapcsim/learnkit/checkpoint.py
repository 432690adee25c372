"""Versioned ``.npz`` checkpoints for the two learnkit architectures.

Layout: ``meta`` (a JSON string with format name, version, model kind,
spec echo and caller extras), ``param/<name>`` arrays and, when an
optimizer is saved, ``adam/m/<name>``, ``adam/v/<name>`` and ``adam/t``.
Arrays are stored as float64 so a reload is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cnn import Cnn, CnnSpec
from .core import Adam, TrainConfig
from .lstm import Lstm, LstmSpec

FORMAT = "mapcsim-learnkit"
VERSION = 1

_KINDS = {"lstm": (Lstm, LstmSpec), "cnn": (Cnn, CnnSpec)}


def save_checkpoint(path, model, optimizer: Adam | None = None, extra: dict | None = None,
                    arrays: dict | None = None):
    meta = {"format": FORMAT, "version": VERSION, "kind": model.kind,
            "spec": model.spec.to_dict(), "extra": extra or {}}
    out = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for k, v in model.params.items():
        out[f"param/{k}"] = np.asarray(v, dtype=np.float64)
    if optimizer is not None:
        meta["train_config"] = optimizer.cfg.to_dict()
        out["meta"] = np.array(json.dumps(meta, sort_keys=True))
        out["adam/t"] = np.array(optimizer.t)
        for k in model.params:
            out[f"adam/m/{k}"] = optimizer.m[k]
            out[f"adam/v/{k}"] = optimizer.v[k]
    for k, v in (arrays or {}).items():
        out[f"array/{k}"] = np.asarray(v)
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **out)
    return path


def load_checkpoint(path):
    """Returns ``(model, optimizer_or_None, meta, arrays)``."""
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} checkpoint")
        if meta.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        cls, spec_cls = _KINDS[meta["kind"]]
        spec_kw = dict(meta["spec"])
        if "conv_filters" in spec_kw:
            spec_kw["conv_filters"] = tuple(spec_kw["conv_filters"])
        model = cls(spec_cls(**spec_kw))
        for k in model.params:
            model.params[k] = z[f"param/{k}"].copy()
        opt = None
        if "adam/t" in z:
            opt = Adam(model.params, TrainConfig(**meta["train_config"]))
            opt.t = int(z["adam/t"])
            for k in model.params:
                opt.m[k] = z[f"adam/m/{k}"].copy()
                opt.v[k] = z[f"adam/v/{k}"].copy()
        arrays = {k[len("array/"):]: z[k].copy() for k in z.files if k.startswith("array/")}
    return model, opt, meta, arrays
