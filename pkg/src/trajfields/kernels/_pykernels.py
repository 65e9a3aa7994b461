"""Pure numpy implementations of the hot decode/encode kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same results (bitwise for integer outputs, to rounding for floats).
Grids are indexed ``[row, col] = [y, x]``.
"""
import math

import numpy as np


def accumulate(field, sigma, p_floor, radius, scale, out_size):
    """Sum confidence-weighted isotropic Gaussians into an ``out_size`` map.

    ``field`` is ``(3, G, G)`` holding (x offset, y offset, confidence) per
    cell.  Each cell with confidence above ``p_floor`` contributes a peak-1
    Gaussian centred at ``scale * (cell + offset)``, evaluated only on
    pixels within ``radius`` (Chebyshev) of the centre.
    """
    field = np.ascontiguousarray(field, dtype=np.float64)
    H = np.zeros((out_size, out_size), dtype=np.float64)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    rows, cols = np.nonzero(field[2] > p_floor)
    for j, i in zip(rows.tolist(), cols.tolist()):
        p = field[2, j, i]
        mx = scale * (i + field[0, j, i])
        my = scale * (j + field[1, j, i])
        u0 = max(int(math.ceil(mx - radius)), 0)
        u1 = min(int(math.floor(mx + radius)), out_size - 1)
        v0 = max(int(math.ceil(my - radius)), 0)
        v1 = min(int(math.floor(my + radius)), out_size - 1)
        if u0 > u1 or v0 > v1:
            continue
        gx = np.exp(-((np.arange(u0, u1 + 1) - mx) ** 2) * inv2s2)
        gy = np.exp(-((np.arange(v0, v1 + 1) - my) ** 2) * inv2s2)
        H[v0 : v1 + 1, u0 : u1 + 1] += p * np.outer(gy, gx)
    return H


def local_maxima(H, threshold, half):
    """Flat indices of strict window maxima of ``H`` that reach ``threshold``.

    A pixel qualifies if no other pixel within Chebyshev distance ``half``
    beats it; equal values are resolved in favour of the lower row-major
    index.  Result is sorted by flat index.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    n_rows, n_cols = H.shape
    padded = np.full((n_rows + 2 * half, n_cols + 2 * half), -np.inf)
    padded[half : half + n_rows, half : half + n_cols] = H
    keep = H >= threshold
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx == 0:
                continue
            other = padded[half + dy : half + dy + n_rows, half + dx : half + dx + n_cols]
            if dy < 0 or (dy == 0 and dx < 0):
                keep &= other < H
            else:
                keep &= other <= H
    return np.flatnonzero(keep).astype(np.int64)


def rasterize(positions, radius, size):
    """Binary map with ones within Manhattan ``radius`` of any position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    M = np.zeros((size, size), dtype=np.uint8)
    for x, y in positions.tolist():
        u0 = max(int(math.ceil(x - radius)), 0)
        u1 = min(int(math.floor(x + radius)), size - 1)
        v0 = max(int(math.ceil(y - radius)), 0)
        v1 = min(int(math.floor(y + radius)), size - 1)
        if u0 > u1 or v0 > v1:
            continue
        du = np.abs(np.arange(u0, u1 + 1) - x)
        dv = np.abs(np.arange(v0, v1 + 1) - y)
        inside = (dv[:, None] + du[None, :]) <= radius
        M[v0 : v1 + 1, u0 : u1 + 1] |= inside.astype(np.uint8)
    return M


def assign_vicinity(grid_positions, d0, size):
    """Owner index per cell, ``-1`` where no agent is within Manhattan ``d0``.

    Vicinity is measured from the floored cell of each agent; among agents
    whose vicinity covers a cell, the one closest (Euclidean, continuous
    position) to the cell point wins, lowest index on exact ties.
    """
    pos = np.asarray(grid_positions, dtype=np.float64).reshape(-1, 2)
    owner = np.full((size, size), -1, dtype=np.int32)
    best = np.full((size, size), np.inf)
    for a, (x, y) in enumerate(pos.tolist()):
        ci, cj = int(math.floor(x)), int(math.floor(y))
        i0, i1 = max(ci - d0, 0), min(ci + d0, size - 1)
        j0, j1 = max(cj - d0, 0), min(cj + d0, size - 1)
        if i0 > i1 or j0 > j1:
            continue
        ii = np.arange(i0, i1 + 1)
        jj = np.arange(j0, j1 + 1)
        inside = (np.abs(jj - cj)[:, None] + np.abs(ii - ci)[None, :]) <= d0
        dist = (jj[:, None] - y) ** 2 + (ii[None, :] - x) ** 2
        win_best = best[j0 : j1 + 1, i0 : i1 + 1]
        win_owner = owner[j0 : j1 + 1, i0 : i1 + 1]
        # strict < keeps the earlier (lower-index) agent on ties
        take = inside & (dist < win_best)
        win_best[take] = dist[take]
        win_owner[take] = a
    return owner
