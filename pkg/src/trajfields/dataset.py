"""Annotation loading, normalization, windowing and augmentation.

Positions are normalized into a 256x256 image space with ``x`` along
columns and ``y`` along rows.  Raster maps use ``[row, col] = [y, x]``.
"""
from __future__ import annotations

import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IMAGE = 256
ANNOTATION_PERIOD = 0.4  # seconds per step
SEMANTIC_CLASSES = ("walkable", "vegetation", "drivable", "non_drivable", "sidewalk")
AUGMENT_OPS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")
INVERSE_OP = {
    "identity": "identity", "hflip": "hflip", "vflip": "vflip",
    "rot90": "rot270", "rot180": "rot180", "rot270": "rot90",
}

# positions are snapped to this dyadic grid so that every augmentation is an
# exact float bijection (256 - x is exact for multiples of 2**-44)
_SNAP = 2.0**44
_UPPER = math.nextafter(float(IMAGE), 0.0)


class AnnotationError(ValueError):
    """Malformed annotation file; carries the path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, line {line}: {message}")


@dataclass
class AgentTrack:
    agent_id: int
    frames: np.ndarray  # (k,) strictly increasing ints
    positions: np.ndarray  # (k, 2)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class SceneTransform:
    """Affine map between raw scene coordinates and the 256 image space."""

    scale_x: float
    scale_y: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def to_image(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([(xy[..., 0] - self.origin_x) * self.scale_x,
                         (xy[..., 1] - self.origin_y) * self.scale_y], axis=-1)

    def to_world(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([xy[..., 0] / self.scale_x + self.origin_x,
                         xy[..., 1] / self.scale_y + self.origin_y], axis=-1)


@dataclass
class Sample:
    """One observation/prediction window.

    ``past`` is ``(n, T_obs, 2)``; ``future`` is ``(n, T_pred, 2)`` with NaN
    where ``future_mask`` is False.
    """

    past: np.ndarray
    future: np.ndarray
    future_mask: np.ndarray
    scene_id: str = ""
    agent_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    t0: int = 0  # frame id of the first predicted step

    @property
    def n_agents(self) -> int:
        return self.past.shape[0]

    @property
    def last_observed(self) -> np.ndarray:
        return self.past[:, -1]


@dataclass(frozen=True)
class SplitPlan:
    train_scenes: tuple
    test_scenes: tuple
    protocol: str = "leave-one-out"

    def __post_init__(self):
        overlap = set(self.train_scenes) & set(self.test_scenes)
        if overlap:
            raise ValueError(f"scenes in both train and test: {sorted(overlap)}")


@dataclass
class Scene:
    scene_id: str
    tracks: list
    transform: SceneTransform
    frame_step: int
    semantic: np.ndarray | None = None


def _infer_frame_step(frames_by_agent) -> int:
    diffs = Counter()
    for frames in frames_by_agent:
        d = np.diff(np.sort(np.asarray(frames)))
        diffs.update(int(v) for v in d if v > 0)
    if not diffs:
        return 1
    return diffs.most_common(1)[0][0]


def _split_at_gaps(agent_id, frames, positions, step):
    order = np.argsort(frames, kind="stable")
    frames, positions = frames[order], positions[order]
    if len(frames) == 0:
        return []
    cuts = np.flatnonzero(np.diff(frames) != step) + 1
    return [AgentTrack(agent_id, f, p)
            for f, p in zip(np.split(frames, cuts), np.split(positions, cuts))]


def _parse_rows(path, n_cols):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) < n_cols:
                raise AnnotationError(path, lineno, f"expected {n_cols} columns, got {len(parts)}")
            rows.append((lineno, parts))
    return rows


def load_annotations(path, fmt: str = "ethucy", frame_step: int | None = None,
                     sdd_step: int = 12) -> list[AgentTrack]:
    """Parse an annotation file into per-agent tracks in raw coordinates.

    ``ethucy`` rows are ``frame_id agent_id x y``.  ``sdd`` rows use the
    native ten-column layout; the box centre is the position, lost boxes are
    dropped and frames are subsampled every ``sdd_step`` frames.  Tracks are
    split wherever consecutive frames differ by more than ``frame_step``
    (inferred from the data when not given).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    by_agent: dict[int, list] = {}
    if fmt == "ethucy":
        for lineno, parts in _parse_rows(path, 4):
            try:
                frame = int(float(parts[0]))
                agent = int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError as e:
                raise AnnotationError(path, lineno, str(e)) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise AnnotationError(path, lineno, "non-finite coordinate")
            by_agent.setdefault(agent, []).append((frame, x, y))
    elif fmt == "sdd":
        for lineno, parts in _parse_rows(path, 6):
            try:
                agent = int(parts[0])
                xmin, ymin, xmax, ymax = (float(v) for v in parts[1:5])
                frame = int(parts[5])
                lost = int(parts[6]) if len(parts) > 6 else 0
            except ValueError as e:
                raise AnnotationError(path, lineno, str(e)) from None
            if lost or frame % sdd_step:
                continue
            by_agent.setdefault(agent, []).append((frame, (xmin + xmax) / 2, (ymin + ymax) / 2))
        if frame_step is None:
            frame_step = sdd_step
    else:
        raise ValueError(f"unknown annotation format {fmt!r}")

    if frame_step is None:
        frame_step = _infer_frame_step([[r[0] for r in rows] for rows in by_agent.values()])
    tracks = []
    for agent in sorted(by_agent):
        arr = np.asarray(by_agent[agent], dtype=np.float64)
        tracks.extend(_split_at_gaps(agent, arr[:, 0].astype(np.int64), arr[:, 1:3], frame_step))
    return tracks


def _snap(xy):
    return np.round(np.asarray(xy, dtype=np.float64) * _SNAP) / _SNAP


def normalize_scene(tracks, scene_extent, origin=(0.0, 0.0)):
    """Scale raw tracks into the 256 image space.

    Returns ``(tracks, transform)``.  Positions outside the extent are
    clamped into ``[0, 256)`` with a warning.
    """
    w, h = scene_extent
    if w <= 0 or h <= 0:
        raise ValueError(f"scene extent must be positive, got {scene_extent}")
    transform = SceneTransform(IMAGE / w, IMAGE / h, float(origin[0]), float(origin[1]))
    out = []
    n_clamped = 0
    for tr in tracks:
        pos = _snap(transform.to_image(tr.positions))
        bad = (pos < 0) | (pos > _UPPER)
        if bad.any():
            n_clamped += int(bad.any(axis=1).sum())
            pos = np.clip(pos, 0.0, _UPPER)
        out.append(AgentTrack(tr.agent_id, tr.frames.copy(), pos))
    if n_clamped:
        log.warning("clamped %d positions outside scene extent %s", n_clamped, scene_extent)
    return out, transform


def auto_extent(tracks, margin: float = 0.0):
    """Bounding box ``(origin, extent)`` covering every position in ``tracks``."""
    pts = np.concatenate([t.positions for t in tracks]) if tracks else np.zeros((1, 2))
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    ext = np.maximum(hi - lo, 1e-9) * (1 + 1e-9)
    return (float(lo[0]), float(lo[1])), (float(ext[0]), float(ext[1]))


def _dense_scene(tracks, step):
    f_min = min(int(t.frames[0]) for t in tracks)
    f_max = max(int(t.frames[-1]) for t in tracks)
    n_steps = (f_max - f_min) // step + 1
    grid = np.full((len(tracks), n_steps, 2), np.nan)
    for k, tr in enumerate(tracks):
        offs = tr.frames - f_min
        on_grid = offs % step == 0
        grid[k, offs[on_grid] // step] = tr.positions[on_grid]
    return grid, f_min


def make_samples(tracks, T_obs: int, T_pred: int, stride: int = 1, scene_id: str = "",
                 frame_step: int | None = None) -> list[Sample]:
    """Sliding windows over a scene.

    An agent enters a window only if observed at all ``T_obs`` past steps;
    missing future steps are kept as NaN and flagged in ``future_mask``.
    Windows must fit inside the scene's frame range and are dropped when no
    agent is fully observed.
    """
    if T_obs < 1 or T_pred < 1:
        raise ValueError("T_obs and T_pred must be >= 1")
    tracks = [t for t in tracks if len(t)]
    if not tracks:
        return []
    step = frame_step or _infer_frame_step([t.frames for t in tracks])
    grid, f_min = _dense_scene(tracks, step)
    ids = np.asarray([t.agent_id for t in tracks], dtype=np.int64)
    T = T_obs + T_pred
    observed = ~np.isnan(grid[..., 0])
    samples = []
    for s in range(0, grid.shape[1] - T + 1, stride):
        keep = observed[:, s : s + T_obs].all(axis=1)
        if not keep.any():
            continue
        win = grid[keep, s : s + T]
        samples.append(Sample(
            past=win[:, :T_obs].copy(),
            future=win[:, T_obs:].copy(),
            future_mask=observed[keep, s + T_obs : s + T].copy(),
            scene_id=scene_id,
            agent_ids=ids[keep],
            t0=f_min + (s + T_obs) * step,
        ))
    return samples


def transform_points(xy, op: str):
    """Apply an augmentation op to continuous ``(x, y)`` positions."""
    xy = np.asarray(xy, dtype=np.float64)
    x, y = xy[..., 0], xy[..., 1]
    if op == "identity":
        nx, ny = x, y
    elif op == "hflip":
        nx, ny = IMAGE - x, y
    elif op == "vflip":
        nx, ny = x, IMAGE - y
    elif op == "rot90":
        nx, ny = y, IMAGE - x
    elif op == "rot180":
        nx, ny = IMAGE - x, IMAGE - y
    elif op == "rot270":
        nx, ny = IMAGE - y, x
    else:
        raise ValueError(f"unknown augmentation {op!r}")
    return np.stack([nx, ny], axis=-1)


def transform_raster(m, op: str):
    """Apply an augmentation op to a ``[..., row, col]`` raster."""
    m = np.asarray(m)
    if op == "identity":
        return m.copy()
    if op == "hflip":
        return np.flip(m, axis=-1).copy()
    if op == "vflip":
        return np.flip(m, axis=-2).copy()
    k = {"rot90": 1, "rot180": 2, "rot270": 3}.get(op)
    if k is None:
        raise ValueError(f"unknown augmentation {op!r}")
    return np.rot90(m, k, axes=(-2, -1)).copy()


def augment(sample: Sample, semantic_map, op: str):
    """Flip / rotate a sample and its semantic map about the image centre."""
    if op not in AUGMENT_OPS:
        raise ValueError(f"unknown augmentation {op!r}")
    out = replace(
        sample,
        past=transform_points(sample.past, op),
        future=transform_points(sample.future, op),
        future_mask=sample.future_mask.copy(),
    )
    sem = None if semantic_map is None else transform_raster(semantic_map, op)
    return out, sem


def all_walkable_map() -> np.ndarray:
    m = np.zeros((len(SEMANTIC_CLASSES), IMAGE, IMAGE), dtype=np.uint8)
    m[0] = 1
    return m


def semantic_map_paths(directory, scene_id):
    d = Path(directory)
    return {c: d / f"{scene_id}_{c}.png" for c in SEMANTIC_CLASSES}


def load_semantic_map(directory, scene_id: str) -> np.ndarray:
    """Load ``<scene>_<class>.png`` masks into a ``(5, 256, 256)`` uint8 map.

    Falls back to an all-walkable map (with a warning) when none of the mask
    files exist; individual missing classes are left empty.
    """
    from PIL import Image

    paths = semantic_map_paths(directory, scene_id) if directory else {}
    if not paths or not any(p.exists() for p in paths.values()):
        log.warning("no semantic maps for scene %r; using all-walkable map", scene_id)
        return all_walkable_map()
    out = np.zeros((len(SEMANTIC_CLASSES), IMAGE, IMAGE), dtype=np.uint8)
    for k, c in enumerate(SEMANTIC_CLASSES):
        p = paths[c]
        if not p.exists():
            log.warning("semantic class %r missing for scene %r", c, scene_id)
            continue
        img = Image.open(p).convert("L")
        if img.size != (IMAGE, IMAGE):
            img = img.resize((IMAGE, IMAGE), Image.NEAREST)
        out[k] = (np.asarray(img) > 127).astype(np.uint8)
    return out


def save_semantic_map(semantic, directory, scene_id: str):
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    for c, p in semantic_map_paths(directory, scene_id).items():
        k = SEMANTIC_CLASSES.index(c)
        Image.fromarray((np.asarray(semantic[k]) * 255).astype(np.uint8)).save(p)


def leave_one_out(scene_ids) -> list[SplitPlan]:
    scene_ids = tuple(scene_ids)
    return [SplitPlan(tuple(s for s in scene_ids if s != test), (test,), "leave-one-out")
            for test in scene_ids]


def sdd_standard(train_videos, test_videos) -> SplitPlan:
    return SplitPlan(tuple(train_videos), tuple(test_videos), "sdd-standard")
