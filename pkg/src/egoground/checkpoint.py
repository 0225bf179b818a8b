"""Checkpoints: one .npz holding parameters, optimizer state, the loss
normalizer, epoch counter, and the config (hash + full dict). Arrays round
trip bit-exactly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PARAM_PREFIX = "param::"
OPT_PREFIX = "opt::"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_state: dict[str, dict]
    normalizer_state: dict
    epoch: int
    config_dict: dict
    config_hash: str
    phase: str


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    opt_state: dict[str, dict], normalizer_state: dict,
                    epoch: int, config_dict: dict, config_hash: str, phase: str):
    arrays = {PARAM_PREFIX + k: v for k, v in params.items()}
    for name, st in opt_state.items():
        arrays[f"{OPT_PREFIX}m::{name}"] = st["m"]
        arrays[f"{OPT_PREFIX}v::{name}"] = st["v"]
        arrays[f"{OPT_PREFIX}t::{name}"] = np.array(st["t"], dtype=np.int64)
    meta = {
        "normalizer": normalizer_state,
        "epoch": epoch,
        "config": config_dict,
        "config_hash": config_hash,
        "phase": phase,
    }
    arrays["meta_json"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta_json"]))
        params: dict[str, np.ndarray] = {}
        opt: dict[str, dict] = {}
        for key in z.files:
            if key.startswith(PARAM_PREFIX):
                params[key[len(PARAM_PREFIX):]] = z[key]
            elif key.startswith(OPT_PREFIX):
                kind, name = key[len(OPT_PREFIX):].split("::", 1)
                entry = opt.setdefault(name, {})
                entry[kind] = int(z[key]) if kind == "t" else z[key]
    return Checkpoint(
        params=params,
        opt_state=opt,
        normalizer_state=meta["normalizer"],
        epoch=int(meta["epoch"]),
        config_dict=meta["config"],
        config_hash=meta["config_hash"],
        phase=meta["phase"],
    )
