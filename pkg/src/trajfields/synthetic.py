"""Synthetic multi-agent scenes for tests, benchmarks and smoke training."""
from __future__ import annotations

import numpy as np

from .dataset import IMAGE, SEMANTIC_CLASSES, AgentTrack, Sample


def _candidate_track(rng, T, max_step, margin, kind):
    speed = rng.uniform(0.0, 0.7 * max_step)
    heading = rng.uniform(0, 2 * np.pi)
    v = speed * np.array([np.cos(heading), np.sin(heading)])
    p0 = rng.uniform(margin, IMAGE - margin, size=2)
    t = np.arange(T, dtype=np.float64)[:, None]
    track = p0 + t * v
    if kind == "sine":
        amp = rng.uniform(2.0, 10.0)
        omega = rng.uniform(0.2, 0.6)
        phase = rng.uniform(0, 2 * np.pi)
        normal = np.array([-np.sin(heading), np.cos(heading)])
        track = track + amp * np.sin(omega * t + phase) * normal
    return track


def random_scene(rng, n_agents: int, T: int, max_step: float = 8.0, min_sep: float = 14.0,
                 margin: float = 16.0, kinds=("linear", "sine"), max_tries: int = 2000) -> np.ndarray:
    """Positions ``(n_agents, T, 2)`` of linear / sinusoidal tracks.

    Every step moves at most ``max_step`` px, every pair of agents stays at
    least ``min_sep`` px apart at every step, and all positions stay
    ``margin`` px inside the image.
    """
    tracks: list[np.ndarray] = []
    for _ in range(n_agents):
        for _ in range(max_tries):
            kind = kinds[rng.integers(len(kinds))]
            cand = _candidate_track(rng, T, max_step, margin, kind)
            if cand.min() < margin or cand.max() > IMAGE - margin:
                continue
            if T > 1 and np.linalg.norm(np.diff(cand, axis=0), axis=1).max() > max_step:
                continue
            if any(np.linalg.norm(cand - o, axis=1).min() < min_sep for o in tracks):
                continue
            tracks.append(cand)
            break
        else:
            raise RuntimeError(f"could not place agent {len(tracks)} of {n_agents}")
    return np.asarray(tracks, dtype=np.float64).reshape(n_agents, T, 2)


def scene_to_sample(positions, T_obs: int, scene_id: str = "synthetic") -> Sample:
    positions = np.asarray(positions, dtype=np.float64)
    n, T = positions.shape[:2]
    return Sample(
        past=positions[:, :T_obs].copy(),
        future=positions[:, T_obs:].copy(),
        future_mask=np.ones((n, T - T_obs), dtype=bool),
        scene_id=scene_id,
        agent_ids=np.arange(n, dtype=np.int64),
        t0=T_obs,
    )


def random_samples(rng, count: int, T_obs: int = 8, T_pred: int = 12, max_agents: int = 6,
                   **kw) -> list[Sample]:
    out = []
    for k in range(count):
        n = int(rng.integers(1, max_agents + 1))
        out.append(scene_to_sample(random_scene(rng, n, T_obs + T_pred, **kw), T_obs,
                                   scene_id=f"synthetic-{k}"))
    return out


def scene_to_tracks(positions, frame_step: int = 10, first_frame: int = 0) -> list[AgentTrack]:
    positions = np.asarray(positions, dtype=np.float64)
    frames = first_frame + frame_step * np.arange(positions.shape[1], dtype=np.int64)
    return [AgentTrack(a, frames.copy(), positions[a].copy()) for a in range(len(positions))]


def striped_semantic_map(rng=None, n_bands: int = 4) -> np.ndarray:
    """A ``(5, 256, 256)`` map of horizontal bands cycling through classes.

    The sidewalk channel overlaps the walkable one to exercise multi-label
    pixels.
    """
    rng = rng or np.random.default_rng(0)
    m = np.zeros((len(SEMANTIC_CLASSES), IMAGE, IMAGE), dtype=np.uint8)
    edges = np.sort(rng.choice(np.arange(16, IMAGE - 16), size=n_bands - 1, replace=False))
    bounds = [0, *edges.tolist(), IMAGE]
    for b in range(n_bands):
        m[b % 4, bounds[b] : bounds[b + 1]] = 1
    m[4] = m[0]
    return m


def write_ethucy(path, positions, frame_step: int = 10, first_frame: int = 0, agent_offset: int = 1):
    """Write tracks as whitespace separated ``frame agent x y`` rows, frame-major."""
    positions = np.asarray(positions, dtype=np.float64)
    n, T = positions.shape[:2]
    with open(path, "w") as fh:
        for t in range(T):
            for a in range(n):
                x, y = positions[a, t]
                if np.isnan(x):
                    continue
                fh.write(f"{first_frame + t * frame_step}\t{a + agent_offset}\t{x:.6f}\t{y:.6f}\n")
