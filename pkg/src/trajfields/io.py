"""Checkpoints, field dumps and trajectory CSVs.

Checkpoints and field dumps are safetensors files: a JSON header followed by
flat little-endian tensor data.  The manifest / channel description sits in
the header metadata under ``"manifest"``.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import torch
from safetensors.numpy import load_file as np_load_file
from safetensors.numpy import save_file as np_save_file
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from .fields import ASSOC_CHANNELS, LOC_CHANNELS
from .model import ModelConfig, TrajectoryNet

TRAJ_COLUMNS = ("sample_id", "agent_id", "t", "x", "y", "associated_flag")


def _flatten_optimizer(state_dict):
    tensors, plain = {}, {}
    for idx, st in state_dict["state"].items():
        for key, val in st.items():
            name = f"optim.state.{idx}.{key}"
            if torch.is_tensor(val):
                tensors[name] = val.detach().clone().contiguous()
            else:
                plain[name] = val
    return tensors, {"param_groups": state_dict["param_groups"], "scalars": plain}


def _unflatten_optimizer(tensors, meta):
    state: dict = {}
    for name, val in tensors.items():
        _, _, idx, key = name.split(".", 3)
        state.setdefault(int(idx), {})[key] = val
    for name, val in meta.get("scalars", {}).items():
        _, _, idx, key = name.split(".", 3)
        state.setdefault(int(idx), {})[key] = val
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path, model: TrajectoryNet, optimizer=None, epoch: int = 0, config=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {f"model.{k}": v.detach().clone().contiguous() for k, v in model.state_dict().items()}
    manifest = {
        "arch_hash": model.cfg.arch_hash(),
        "model_config": _jsonable(vars(model.cfg)),
        "config": _jsonable(config or {}),
        "epoch": epoch,
    }
    if optimizer is not None:
        opt_tensors, opt_meta = _flatten_optimizer(optimizer.state_dict())
        tensors.update(opt_tensors)
        manifest["optimizer"] = _jsonable(opt_meta)
    save_file(tensors, str(path), metadata={"manifest": json.dumps(manifest)})
    return path


def read_manifest(path) -> dict:
    with safe_open(str(path), framework="pt") as fh:
        return json.loads(fh.metadata()["manifest"])


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Return ``(model, manifest, optimizer_state_or_None)``."""
    manifest = read_manifest(path)
    cfg = ModelConfig(**manifest["model_config"])
    if cfg.arch_hash() != manifest["arch_hash"]:
        raise ValueError(f"{path}: architecture hash does not match stored config")
    if expected_config is not None and expected_config.arch_hash() != cfg.arch_hash():
        raise ValueError(f"{path}: checkpoint architecture differs from the run config")
    tensors = load_file(str(path))
    model_sd = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    dtype = next(iter(model_sd.values())).dtype if model_sd else torch.float32
    model = TrajectoryNet(cfg).to(dtype)
    model.load_state_dict(model_sd)
    model.eval()
    opt_state = None
    if "optimizer" in manifest:
        opt_tensors = {k: v for k, v in tensors.items() if k.startswith("optim.")}
        opt_state = _unflatten_optimizer(opt_tensors, manifest["optimizer"])
    return model, manifest, opt_state


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if torch.is_tensor(obj):
        return obj.item() if obj.numel() == 1 else obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "model_dump"):
        return _jsonable(obj.model_dump())
    return obj


def save_fields(path, L=None, A=None, H=None, **extra_meta):
    """Dump localization / association fields and/or heatmaps for one step."""
    tensors, channels = {}, {}
    if L is not None:
        tensors["localization"] = np.ascontiguousarray(L, dtype=np.float32)
        channels["localization"] = list(LOC_CHANNELS)
    if A is not None:
        tensors["association"] = np.ascontiguousarray(A, dtype=np.float32)
        channels["association"] = list(ASSOC_CHANNELS)
    if H is not None:
        tensors["heatmap"] = np.ascontiguousarray(H, dtype=np.float32)
        channels["heatmap"] = ["H"]
    header = {
        "channels": channels,
        "shapes": {k: list(v.shape) for k, v in tensors.items()},
        "dtype": "float32",
        **_jsonable(extra_meta),
    }
    np_save_file(tensors, str(path), metadata={"manifest": json.dumps(header)})
    return Path(path)


def load_fields(path):
    """Return ``(tensors, header)`` from a field dump."""
    with safe_open(str(path), framework="np") as fh:
        header = json.loads(fh.metadata()["manifest"])
    return np_load_file(str(path)), header


def write_trajectories(path, rows):
    """Write decoded tracks; ``rows`` yields ``(sample_id, agent_id, t, x, y, associated)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_COLUMNS)
        for sample_id, agent_id, t, x, y, flag in rows:
            w.writerow([sample_id, int(agent_id), int(t), f"{x:.4f}", f"{y:.4f}", int(bool(flag))])


def read_trajectories(path):
    with open(path, newline="") as fh:
        return [
            {"sample_id": r["sample_id"], "agent_id": int(r["agent_id"]), "t": int(r["t"]),
             "x": float(r["x"]), "y": float(r["y"]), "associated_flag": bool(int(r["associated_flag"]))}
            for r in csv.DictReader(fh)
        ]


def decode_rows(sample_id, agent_ids, result):
    for a, agent_id in enumerate(agent_ids):
        for t in range(result.positions.shape[1]):
            x, y = result.positions[a, t]
            yield sample_id, agent_id, t, x, y, result.associated[a, t]
