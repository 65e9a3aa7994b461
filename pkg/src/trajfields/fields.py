"""Composite-field codec.

Ground-truth localization / association fields are generated from agent
positions, and predicted fields are decoded back into identified agent
positions by Gaussian voting, peak picking and association matching.

Conventions
-----------
* Positions are ``(x, y)`` in the 256x256 image space.
* Fields live on a 64x64 grid; a position maps to grid coordinates
  ``(x / 4, y / 4)`` and cell ``(i, j)`` (column ``i``, row ``j``) sits at
  grid point ``(i, j)``.
* Arrays are channel-first and indexed ``[c, row, col] = [c, y, x]``.
* Localization channels: ``x_off, y_off, p``.
  Association channels: ``bx, by, fx, fy, p`` (back pointer to t-1,
  forward pointer to t, confidence).  Offsets are in grid cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels

GRID = 64
IMAGE = 256
SCALE = IMAGE // GRID

LOC_CHANNELS = ("x_off", "y_off", "p")
ASSOC_CHANNELS = ("bx", "by", "fx", "fy", "p")


@dataclass(frozen=True)
class FieldParams:
    """Knobs for encoding and decoding composite fields.

    ``truncate`` is the Gaussian cut-off radius in units of ``sigma``;
    6 sigma keeps the truncated map within 1e-4 of the exact sum even for
    a fully populated 64x64 field.
    """

    d0: int = 3
    sigma: float = 4.0
    p_floor: float = 0.1
    truncate: float = 6.0
    nms_window: int = 7
    threshold_ratio: float = 0.3
    assoc_p_thresh: float = 0.5
    refine: bool = True

    @property
    def threshold(self) -> float:
        return self.threshold_ratio * vicinity_size(self.d0)


def vicinity_size(d0: int) -> int:
    """Number of cells within Manhattan distance ``d0`` of a cell."""
    return 2 * d0 * (d0 + 1) + 1


def _as_positions(positions) -> np.ndarray:
    return np.asarray(positions, dtype=np.float64).reshape(-1, 2)


def encode_localization(positions, d0: int) -> np.ndarray:
    """Ground-truth localization field for agents at ``positions``."""
    pos = _as_positions(positions) / SCALE
    out = np.zeros((3, GRID, GRID), dtype=np.float64)
    if len(pos) == 0:
        return out
    owner = kernels.assign_vicinity(pos, int(d0), GRID)
    rows, cols = np.nonzero(owner >= 0)
    a = owner[rows, cols]
    out[0, rows, cols] = pos[a, 0] - cols
    out[1, rows, cols] = pos[a, 1] - rows
    out[2, rows, cols] = 1.0
    return out


def encode_association(prev, curr, d0: int) -> np.ndarray:
    """Ground-truth association field linking ``prev`` (t-1) to ``curr`` (t).

    ``prev`` and ``curr`` are index-aligned by agent.  Vicinities are taken
    around the current positions.
    """
    prev = _as_positions(prev) / SCALE
    curr = _as_positions(curr) / SCALE
    if len(prev) != len(curr):
        raise ValueError(f"prev has {len(prev)} agents but curr has {len(curr)}")
    out = np.zeros((5, GRID, GRID), dtype=np.float64)
    if len(curr) == 0:
        return out
    owner = kernels.assign_vicinity(curr, int(d0), GRID)
    rows, cols = np.nonzero(owner >= 0)
    a = owner[rows, cols]
    out[0, rows, cols] = prev[a, 0] - cols
    out[1, rows, cols] = prev[a, 1] - rows
    out[2, rows, cols] = curr[a, 0] - cols
    out[3, rows, cols] = curr[a, 1] - rows
    out[4, rows, cols] = 1.0
    return out


def encode_sample_fields(last_observed, future, d0: int, future_mask=None):
    """Per-step ground truth ``(L, A)`` arrays for one sample.

    Returns arrays of shape ``(T_pred, 3, 64, 64)`` and ``(T_pred, 5, 64, 64)``.
    An agent enters step ``t`` of L when valid at ``t``, and of A when valid at
    both ``t`` and ``t - 1`` (the last observation counts as always valid).
    """
    last_observed = _as_positions(last_observed)
    future = np.asarray(future, dtype=np.float64).reshape(len(last_observed), -1, 2)
    n, T = future.shape[:2]
    mask = np.ones((n, T), dtype=bool) if future_mask is None else np.asarray(future_mask, bool)
    L = np.zeros((T, 3, GRID, GRID))
    A = np.zeros((T, 5, GRID, GRID))
    prev, prev_ok = last_observed, np.ones(n, dtype=bool)
    for t in range(T):
        ok = mask[:, t]
        L[t] = encode_localization(future[ok, t], d0)
        both = ok & prev_ok
        A[t] = encode_association(prev[both], future[both, t], d0)
        prev, prev_ok = future[:, t], ok
    return L, A


def accumulate(loc_field, sigma: float, p_floor: float = 0.0, truncate: float = 6.0) -> np.ndarray:
    """Accumulator map H (256x256) from a localization field.

    Each cell with ``p > p_floor`` adds ``p`` times a peak-1 isotropic
    Gaussian centred at ``4 * (cell + offset)``; contributions are cut off
    ``truncate * sigma`` pixels from their centre.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0.0 <= p_floor < 1.0:
        raise ValueError("p_floor must lie in [0, 1)")
    return kernels.accumulate(
        np.asarray(loc_field, dtype=np.float64), float(sigma), float(p_floor),
        float(truncate * sigma), float(SCALE), IMAGE,
    )


def accumulate_dense(loc_field, sigma: float, p_floor: float = 0.0) -> np.ndarray:
    """Untruncated accumulation as a separable matrix product."""
    f = np.asarray(loc_field, dtype=np.float64)
    rows, cols = np.nonzero(f[2] > p_floor)
    p = f[2, rows, cols]
    mx = SCALE * (cols + f[0, rows, cols])
    my = SCALE * (rows + f[1, rows, cols])
    grid = np.arange(IMAGE, dtype=np.float64)
    gx = np.exp(-((grid[None, :] - mx[:, None]) ** 2) / (2 * sigma**2))
    gy = np.exp(-((grid[None, :] - my[:, None]) ** 2) / (2 * sigma**2))
    return (gy * p[:, None]).T @ gx


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    score: float
    row: int = dc_field(default=-1, compare=False)
    col: int = dc_field(default=-1, compare=False)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def _refine_1d(lo: float, mid: float, hi: float) -> float:
    # parabola through log-values: exact vertex for a single Gaussian
    if lo <= 0 or hi <= 0 or mid <= 0:
        return 0.0
    a, b, c = math.log(lo), math.log(mid), math.log(hi)
    denom = a - 2 * b + c
    if denom >= 0:
        return 0.0
    return min(max(0.5 * (a - c) / denom, -0.5), 0.5)


def detect_peaks(H, threshold: float, window: int, max_count: int | None = None,
                 refine: bool = True) -> list[Detection]:
    """Thresholded 2D non-maximum suppression on an accumulator map.

    Returns detections sorted by descending score, pairwise at least
    ``window`` pixels apart (Chebyshev), truncated to ``max_count``.  With
    ``refine`` the position gets a sub-pixel log-parabola correction.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    H = np.asarray(H, dtype=np.float64)
    n_rows, n_cols = H.shape
    flat = kernels.local_maxima(H, float(threshold), window // 2)
    if flat.size == 0 or max_count == 0:
        return []
    scores = H.reshape(-1)[flat]
    order = np.lexsort((flat, -scores))
    kept: list[tuple[int, int]] = []
    out: list[Detection] = []
    for k in order.tolist():
        r, c = divmod(int(flat[k]), n_cols)
        if any(max(abs(r - rr), abs(c - cc)) < window for rr, cc in kept):
            continue
        kept.append((r, c))
        x, y = float(c), float(r)
        if refine:
            if 0 < c < n_cols - 1:
                x += _refine_1d(H[r, c - 1], H[r, c], H[r, c + 1])
            if 0 < r < n_rows - 1:
                y += _refine_1d(H[r - 1, c], H[r, c], H[r + 1, c])
        out.append(Detection(x, y, float(H[r, c]), r, c))
        if max_count is not None and len(out) >= max_count:
            break
    return out


def _pointer_estimate(assoc, known_prev, p_thresh):
    """Forward-pointer estimate from the cell whose back pointer best hits ``known_prev``."""
    p = assoc[4]
    rows, cols = np.nonzero(p > p_thresh)
    if rows.size == 0:
        return None, math.inf
    bx = SCALE * (cols + assoc[0, rows, cols])
    by = SCALE * (rows + assoc[1, rows, cols])
    d = np.hypot(bx - known_prev[0], by - known_prev[1])
    k = int(np.argmin(d))
    r, c = rows[k], cols[k]
    est = (SCALE * (c + assoc[2, r, c]), SCALE * (r + assoc[3, r, c]))
    return est, float(d[k])


def associate(assoc, known_prev, candidates, p_thresh: float):
    """Index of the candidate continuing the agent last seen at ``known_prev``.

    ``None`` if no association cell clears ``p_thresh`` or there are no
    candidates.
    """
    est, _ = _pointer_estimate(np.asarray(assoc, dtype=np.float64), known_prev, p_thresh)
    if est is None or not candidates:
        return None
    d = [math.hypot(c.x - est[0], c.y - est[1]) for c in candidates]
    return int(np.argmin(d))


def associate_all(assoc, known_prevs, candidates, p_thresh: float):
    """One-to-one greedy matching of every agent to the candidates.

    Returns ``(matches, estimates)``: ``matches[a]`` is a candidate index or
    ``None``; ``estimates[a]`` is the forward-pointer estimate (``None`` when
    no association cell clears the threshold).  Pairs are consumed in
    ascending estimate-to-candidate distance.
    """
    assoc = np.asarray(assoc, dtype=np.float64)
    known_prevs = _as_positions(known_prevs)
    estimates = [_pointer_estimate(assoc, kp, p_thresh)[0] for kp in known_prevs]
    pairs = []
    for a, est in enumerate(estimates):
        if est is None:
            continue
        for c, cand in enumerate(candidates):
            pairs.append((math.hypot(cand.x - est[0], cand.y - est[1]), a, c))
    pairs.sort()
    matches: list[int | None] = [None] * len(known_prevs)
    used = set()
    for _, a, c in pairs:
        if matches[a] is None and c not in used:
            matches[a] = c
            used.add(c)
    return matches, estimates


@dataclass
class DecodeResult:
    """Decoded future tracks.

    ``positions`` is ``(n_agents, T_pred, 2)``; ``associated[a, t]`` is False
    where agent ``a`` had no matched detection at step ``t`` and was carried
    forward by its pointer estimate (or held in place).
    """

    positions: np.ndarray
    associated: np.ndarray
    heatmaps: list = dc_field(default_factory=list)
    detections: list = dc_field(default_factory=list)

    @property
    def n_unassociated(self) -> int:
        return int((~self.associated).sum())


def decode_trajectories(L, A, seeds, params: FieldParams | None = None,
                        keep_heatmaps: bool = False) -> DecodeResult:
    """Chain accumulate, peak picking and association over all future steps."""
    params = params or FieldParams()
    seeds = _as_positions(seeds)
    L = np.asarray(L, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if len(L) != len(A):
        raise ValueError(f"got {len(L)} localization but {len(A)} association fields")
    n, T = len(seeds), len(L)
    positions = np.zeros((n, T, 2))
    associated = np.zeros((n, T), dtype=bool)
    result = DecodeResult(positions, associated)
    if n == 0:
        return result
    prev = seeds.copy()
    for t in range(T):
        H = accumulate(L[t], params.sigma, params.p_floor, params.truncate)
        dets = detect_peaks(H, params.threshold, params.nms_window, max_count=n, refine=params.refine)
        matches, estimates = associate_all(A[t], prev, dets, params.assoc_p_thresh)
        for a in range(n):
            if matches[a] is not None:
                positions[a, t] = dets[matches[a]].position
                associated[a, t] = True
            elif estimates[a] is not None:
                positions[a, t] = estimates[a]
            else:
                positions[a, t] = prev[a]
        prev = positions[:, t].copy()
        if keep_heatmaps:
            result.heatmaps.append(H)
            result.detections.append(dets)
    return result
