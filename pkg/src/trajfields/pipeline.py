"""Scene preparation with a content-hash keyed cache."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset
from .config import RunConfig

log = logging.getLogger(__name__)

CACHE_ENV = "TRAJFIELDS_CACHE"


class DataError(RuntimeError):
    pass


@dataclass
class PreparedScene:
    scene: dataset.Scene
    samples: list
    unit: str


def cache_root(cfg: RunConfig) -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return (cfg.resolve(cfg.output_dir) or Path(cfg.output_dir)) / "cache"


def _frame_step(sc) -> int | None:
    if sc.fps:
        return max(int(round(dataset.ANNOTATION_PERIOD * sc.fps)), 1)
    return None


def missing_inputs(cfg: RunConfig) -> list[str]:
    return [f"{sid}: {cfg.resolve(sc.path)}" for sid, sc in cfg.data.scenes.items()
            if not cfg.resolve(sc.path).exists()]


def content_hash(cfg: RunConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(cfg.data.model_dump(), sort_keys=True).encode())
    for sid in sorted(cfg.data.scenes):
        sc = cfg.data.scenes[sid]
        h.update(cfg.resolve(sc.path).read_bytes())
        if sc.semantic_dir:
            for p in dataset.semantic_map_paths(cfg.resolve(sc.semantic_dir), sid).values():
                if p.exists():
                    h.update(p.name.encode())
                    h.update(p.read_bytes())
    return h.hexdigest()[:20]


def _load_scene(cfg: RunConfig, sid: str) -> dataset.Scene:
    sc = cfg.data.scenes[sid]
    step = _frame_step(sc)
    if sc.format == "sdd":
        raw = dataset.load_annotations(cfg.resolve(sc.path), "sdd", sdd_step=step or 12)
        step = step or 12
    else:
        raw = dataset.load_annotations(cfg.resolve(sc.path), "ethucy", frame_step=step)
    if sc.extent == "auto":
        origin, extent = dataset.auto_extent(raw)
        if sc.origin is not None:
            origin = sc.origin
    else:
        extent, origin = sc.extent, sc.origin or (0.0, 0.0)
    tracks, transform = dataset.normalize_scene(raw, extent, origin)
    if step is None:
        step = dataset._infer_frame_step([t.frames for t in tracks])
    semantic = dataset.load_semantic_map(cfg.resolve(sc.semantic_dir), sid)
    return dataset.Scene(sid, tracks, transform, step, semantic)


def _save_scene(path: Path, scene: dataset.Scene, sample_t0):
    tr = scene.tracks
    lengths = np.asarray([len(t) for t in tr], dtype=np.int64)
    np.savez_compressed(
        path,
        agent_ids=np.asarray([t.agent_id for t in tr], dtype=np.int64),
        lengths=lengths,
        frames=np.concatenate([t.frames for t in tr]) if tr else np.zeros(0, np.int64),
        positions=np.concatenate([t.positions for t in tr]) if tr else np.zeros((0, 2)),
        transform=np.asarray([scene.transform.scale_x, scene.transform.scale_y,
                              scene.transform.origin_x, scene.transform.origin_y]),
        frame_step=np.asarray(scene.frame_step),
        semantic=scene.semantic,
        sample_t0=np.asarray(sample_t0, dtype=np.int64),
    )


def _read_scene(path: Path, sid: str) -> dataset.Scene:
    z = np.load(path)
    bounds = np.concatenate([[0], np.cumsum(z["lengths"])])
    tracks = [
        dataset.AgentTrack(int(a), z["frames"][bounds[k]:bounds[k + 1]].copy(),
                           z["positions"][bounds[k]:bounds[k + 1]].copy())
        for k, a in enumerate(z["agent_ids"])
    ]
    sx, sy, ox, oy = z["transform"].tolist()
    return dataset.Scene(sid, tracks, dataset.SceneTransform(sx, sy, ox, oy),
                         int(z["frame_step"]), z["semantic"])


def prepare(cfg: RunConfig, scene_ids=None) -> tuple[dict, bool]:
    """Load (or reuse cached) scenes; returns ``({scene_id: PreparedScene}, cache_hit)``."""
    missing = missing_inputs(cfg)
    if missing:
        raise DataError("missing annotation files:\n  " + "\n  ".join(missing))
    key = content_hash(cfg)
    cdir = cache_root(cfg) / key
    scene_ids = list(scene_ids or cfg.data.scenes)
    hit = all((cdir / f"{sid}.npz").exists() for sid in scene_ids)
    out = {}
    for sid in scene_ids:
        path = cdir / f"{sid}.npz"
        if hit:
            scene = _read_scene(path, sid)
        else:
            scene = _load_scene(cfg, sid)
        samples = dataset.make_samples(scene.tracks, cfg.data.T_obs, cfg.data.T_pred,
                                       cfg.data.stride, sid, scene.frame_step)
        if not hit:
            cdir.mkdir(parents=True, exist_ok=True)
            _save_scene(path, scene, [s.t0 for s in samples])
        out[sid] = PreparedScene(scene, samples, cfg.data.scenes[sid].units)
    if not hit:
        (cdir / "manifest.json").write_text(json.dumps(
            {"key": key, "scenes": scene_ids, "data": cfg.data.model_dump()}, indent=2, default=str))
    log.info("prepare: %s (%s)", "cache hit" if hit else "prepared", cdir)
    return out, hit


def split_plan(cfg: RunConfig, test_scene: str | None = None) -> dataset.SplitPlan:
    d = cfg.data
    if d.protocol == "sdd-standard":
        return dataset.sdd_standard(d.train_scenes, d.test_scenes)
    test = test_scene or d.test_scene or (sorted(d.scenes)[-1] if d.scenes else None)
    if test is None:
        raise DataError("no scenes configured")
    plans = {p.test_scenes[0]: p for p in dataset.leave_one_out(sorted(d.scenes))}
    if test not in plans:
        raise DataError(f"unknown test scene {test!r}")
    return plans[test]
