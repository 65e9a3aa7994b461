"""Displacement metrics, the linear baseline, evaluation drivers and the runtime benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import dataset
from .fields import FieldParams, decode_trajectories, encode_sample_fields
from .model import batch_inputs

# metric scale per unit system: ETH/UCY errors in 256-space / 256,
# SDD errors in raw pixels / 5
UNIT_SYSTEMS = ("ethucy", "sdd", "pixels")


@dataclass
class MetricReport:
    ade: float = 0.0
    fde: float = 0.0
    n_agents: int = 0
    n_excluded: int = 0
    n_samples: int = 0
    n_unassociated: int = 0
    per_scene: dict = field(default_factory=dict)
    variant: str = ""


class MetricAccumulator:
    """Pooled ADE/FDE over many samples."""

    def __init__(self):
        self.err_sum = 0.0
        self.err_count = 0
        self.final_sum = 0.0
        self.n_agents = 0
        self.n_excluded = 0
        self.n_samples = 0
        self.n_unassociated = 0

    def add(self, pred, gt, mask=None, n_unassociated: int = 0):
        err, valid = _errors(pred, gt, mask)
        has_any = valid.any(axis=1)
        self.n_excluded += int((~has_any).sum())
        self.err_sum += float(err[valid].sum())
        self.err_count += int(valid.sum())
        for a in np.flatnonzero(has_any):
            last = np.flatnonzero(valid[a])[-1]
            self.final_sum += float(err[a, last])
            self.n_agents += 1
        self.n_samples += 1
        self.n_unassociated += n_unassociated

    def report(self, scale: float = 1.0) -> MetricReport:
        ade = self.err_sum / self.err_count if self.err_count else 0.0
        fde = self.final_sum / self.n_agents if self.n_agents else 0.0
        return MetricReport(ade * scale, fde * scale, self.n_agents, self.n_excluded,
                            self.n_samples, self.n_unassociated)


def _errors(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    valid = np.ones(gt.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    valid &= ~np.isnan(gt).any(axis=-1)
    err = np.linalg.norm(np.nan_to_num(pred - gt), axis=-1)
    return err, valid


def ade_fde(pred, gt, mask=None) -> MetricReport:
    """ADE (mean over agents and valid steps) and FDE (mean final-valid-step error).

    ``pred`` and ``gt`` are ``(n_agents, T, 2)``.  Agents without any valid
    step are excluded and counted in ``n_excluded``.
    """
    acc = MetricAccumulator()
    acc.add(pred, gt, mask)
    return acc.report()


def linear_baseline(past, T_pred: int) -> np.ndarray:
    """Per-agent, per-axis least-squares line through the past, extrapolated."""
    past = np.asarray(past, dtype=np.float64)
    T_obs = past.shape[1]
    if T_obs < 2:
        raise ValueError("linear baseline needs at least 2 observed steps")
    t = np.arange(T_obs, dtype=np.float64)
    tc = t - t.mean()
    mean = past.mean(axis=1, keepdims=True)
    slope = np.einsum("t,ntc->nc", tc, past - mean) / (tc @ tc)
    t_future = np.arange(T_obs, T_obs + T_pred, dtype=np.float64) - t.mean()
    return mean + slope[:, None, :] * t_future[None, :, None]


def _metric_positions(xy, unit: str, transform):
    if unit == "sdd":
        return transform.to_world(xy)
    return xy


def _unit_scale(unit: str) -> float:
    return {"ethucy": 1.0 / dataset.IMAGE, "sdd": 1.0 / 5.0, "pixels": 1.0}[unit]


@torch.no_grad()
def predict_fields(model, samples, semantic_maps=None):
    """Network forward for a batch; returns numpy ``(B, T, 3|5, 64, 64)`` arrays."""
    model.eval()
    dtype = next(model.parameters()).dtype
    maps, sem = batch_inputs(samples, semantic_maps, dtype)
    L, A = model(maps, sem)
    return L.double().numpy(), A.double().numpy()


def predict_sample(model, sample, semantic=None, params: FieldParams | None = None,
                   keep_heatmaps: bool = False):
    """Full pipeline for one sample: returns ``(DecodeResult, L, A)``."""
    params = params or FieldParams()
    L, A = predict_fields(model, [sample], None if semantic is None else [semantic])
    res = decode_trajectories(L[0], A[0], sample.last_observed, params, keep_heatmaps)
    return res, L[0], A[0]


def _evaluate(predict, scenes_samples, units, transforms, variant=""):
    per_scene = {}
    for scene_id, samples in scenes_samples.items():
        unit = units.get(scene_id, "ethucy")
        acc = MetricAccumulator()
        for s in samples:
            pred, n_unassoc = predict(s)
            tr = transforms.get(scene_id)
            acc.add(_metric_positions(pred, unit, tr), _metric_positions(s.future, unit, tr),
                    s.future_mask, n_unassoc)
        per_scene[scene_id] = acc.report(_unit_scale(unit))
    return _combine(per_scene, variant)


def _combine(per_scene, variant=""):
    rep = MetricReport()
    if not per_scene:
        return rep
    rep.per_scene = per_scene
    rep.ade = float(np.mean([r.ade for r in per_scene.values()]))
    rep.fde = float(np.mean([r.fde for r in per_scene.values()]))
    for r in per_scene.values():
        rep.n_agents += r.n_agents
        rep.n_excluded += r.n_excluded
        rep.n_samples += r.n_samples
        rep.n_unassociated += r.n_unassociated
    rep.variant = variant
    return rep


def evaluate(model, scenes_samples, params: FieldParams | None = None, semantic=None,
             units=None, transforms=None, batch: int = 8) -> MetricReport:
    """Model pipeline on test samples grouped by scene.

    Per-scene reports are in the scene's units; the top-level ADE/FDE are the
    mean over scenes.
    """
    params = params or FieldParams()
    semantic = semantic or {}
    fallback = dataset.all_walkable_map()
    units, transforms = units or {}, transforms or {}
    preds = {}
    for scene_id, samples in scenes_samples.items():
        sem = semantic.get(scene_id, fallback)
        for b0 in range(0, len(samples), batch):
            chunk = samples[b0 : b0 + batch]
            L, A = predict_fields(model, chunk, [sem] * len(chunk))
            for k, s in enumerate(chunk):
                res = decode_trajectories(L[k], A[k], s.last_observed, params)
                preds[id(s)] = (res.positions, res.n_unassociated)
    return _evaluate(lambda s: preds[id(s)], scenes_samples, units, transforms,
                     getattr(model, "cfg", None) and model.cfg.variant)


def evaluate_linear(scenes_samples, units=None, transforms=None) -> MetricReport:
    return _evaluate(lambda s: (linear_baseline(s.past, s.future.shape[1]), 0),
                     scenes_samples, units or {}, transforms or {}, "linear")


def evaluate_oracle_fields(scenes_samples, params: FieldParams | None = None, units=None,
                           transforms=None) -> MetricReport:
    """Decode ground-truth fields: the codec-only error floor."""
    params = params or FieldParams()

    def predict(s):
        L, A = encode_sample_fields(s.last_observed, np.nan_to_num(s.future), params.d0, s.future_mask)
        res = decode_trajectories(L, A, s.last_observed, params)
        return res.positions, res.n_unassociated

    return _evaluate(predict, scenes_samples, units or {}, transforms or {}, "oracle-fields")


@dataclass
class RuntimeReport:
    """Per agent count and stage (``forward`` / ``decode``) timing statistics."""

    rows: list = field(default_factory=list)  # dicts: agent_count, stage, mean_s, std_s, repeats

    def stage(self, name):
        return {r["agent_count"]: r for r in self.rows if r["stage"] == name}

    def ratio(self, stage: str = "forward") -> float:
        means = [r["mean_s"] for r in self.stage(stage).values()]
        return max(means) / min(means)


def runtime_benchmark(model, agent_counts=(1, 4, 21), repeats: int = 30, warmup: int = 3,
                      params: FieldParams | None = None, seed: int = 0) -> RuntimeReport:
    """Time one network forward and one field decode per agent count.

    Counts are interleaved round-robin inside every repeat so slow drifts of
    the machine affect all counts equally.
    """
    from .synthetic import random_scene, scene_to_sample

    if repeats < 30:
        raise ValueError("runtime benchmark needs at least 30 repeats")
    params = params or FieldParams()
    rng = np.random.default_rng(seed)
    T_obs, T_pred = model.cfg.T_obs, model.cfg.T_pred
    dtype = next(model.parameters()).dtype
    inputs = {}
    for n in agent_counts:
        s = scene_to_sample(random_scene(rng, n, T_obs + T_pred), T_obs)
        maps, _ = batch_inputs([s], None, dtype)
        sem = torch.from_numpy(dataset.all_walkable_map()[None]).to(dtype)
        inputs[n] = (s, maps, sem)
    times = {(n, st): [] for n in agent_counts for st in ("forward", "decode")}
    model.eval()
    with torch.no_grad():
        for r in range(warmup + repeats):
            for n in agent_counts:
                s, maps, sem = inputs[n]
                t0 = time.perf_counter()
                L, A = model(maps, sem)
                t1 = time.perf_counter()
                decode_trajectories(L[0].double().numpy(), A[0].double().numpy(), s.last_observed, params)
                t2 = time.perf_counter()
                if r >= warmup:
                    times[(n, "forward")].append(t1 - t0)
                    times[(n, "decode")].append(t2 - t1)
    rows = [
        {"agent_count": n, "stage": st, "mean_s": float(np.mean(v)), "std_s": float(np.std(v)),
         "repeats": len(v)}
        for (n, st), v in times.items()
    ]
    return RuntimeReport(rows)
