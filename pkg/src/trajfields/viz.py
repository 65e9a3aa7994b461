"""Static renderings of field dumps, heatmaps and decoded trajectories."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import io  # noqa: E402
from .fields import SCALE  # noqa: E402


def plot_field(L, path, title=""):
    """Quiver plot of a localization field, arrows coloured by confidence."""
    L = np.asarray(L)
    p = L[2]
    rows, cols = np.nonzero(p > 0.05)
    fig, ax = plt.subplots(figsize=(5, 5))
    if rows.size:
        q = ax.quiver(cols, rows, L[0, rows, cols], L[1, rows, cols], p[rows, cols],
                      angles="xy", scale_units="xy", scale=1, cmap="viridis", clim=(0, 1))
        fig.colorbar(q, ax=ax, fraction=0.046, label="p")
    ax.set_xlim(0, L.shape[2])
    ax.set_ylim(L.shape[1], 0)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_heatmap(H, detections, path, title=""):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(H, cmap="magma", origin="upper")
    if detections:
        d = np.asarray(detections)
        ax.scatter(d[:, 0], d[:, 1], marker="x", c="cyan", s=40)
    ax.set_title(title)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_tracks(observed, predicted, path, title=""):
    """Overlay of observed (light) and predicted (dark, joined) tracks per agent."""
    fig, ax = plt.subplots(figsize=(5, 5))
    colours = plt.cm.tab10.colors
    for k, agent in enumerate(sorted(set(observed) | set(predicted))):
        c = colours[k % len(colours)]
        if agent in observed:
            o = np.asarray(observed[agent])
            ax.plot(o[:, 0], o[:, 1], "o", color=c, alpha=0.35, ms=4)
        if agent in predicted:
            pr = np.asarray(predicted[agent])
            ax.plot(pr[:, 0], pr[:, 1], "o-", color=c, ms=4)
    ax.set_xlim(0, 64 * SCALE)
    ax.set_ylim(64 * SCALE, 0)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=90, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def _tracks_by_sample(rows):
    out: dict = defaultdict(lambda: defaultdict(list))
    for r in sorted(rows, key=lambda r: (r["sample_id"], r["agent_id"], r["t"])):
        out[r["sample_id"]][r["agent_id"]].append((r["x"], r["y"]))
    return out


def render_directory(input_dir, out_dir) -> list[Path]:
    """Render every field dump, heatmap dump and trajectory CSV in ``input_dir``."""
    input_dir, out_dir = Path(input_dir), Path(out_dir)
    written: list[Path] = []
    if not input_dir.exists():
        return written
    dumps = sorted(input_dir.glob("*.safetensors"))
    csvs = sorted(p for p in input_dir.glob("*.csv") if p.name != "observed.csv")
    if not dumps and not csvs:
        return written
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in dumps:
        tensors, header = io.load_fields(f)
        if "localization" in tensors:
            written.append(plot_field(tensors["localization"], out_dir / f"{f.stem}_loc.png", f.stem))
        if "heatmap" in tensors:
            written.append(plot_heatmap(tensors["heatmap"], header.get("detections", []),
                                        out_dir / f"{f.stem}.png", f.stem))
    observed_path = input_dir / "observed.csv"
    observed = _tracks_by_sample(io.read_trajectories(observed_path)) if observed_path.exists() else {}
    for f in csvs:
        for sid, tracks in _tracks_by_sample(io.read_trajectories(f)).items():
            safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in sid)
            written.append(plot_tracks(observed.get(sid, {}), tracks, out_dir / f"{f.stem}_{safe}.png", sid))
    return written
