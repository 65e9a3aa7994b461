"""Compiled vs numpy kernel timings on a realistic decode workload."""
from __future__ import annotations

import time

import numpy as np

from . import fields, kernels
from .synthetic import random_scene


def _workload(seed, n_agents=21):
    rng = np.random.default_rng(seed)
    pos = random_scene(rng, n_agents, 2)
    grid = pos[:, 1] / fields.SCALE
    L = fields.encode_localization(pos[:, 1], 3)
    # noisy, fully populated field like an untrained network emits
    noisy = L + rng.normal(0, 0.05, L.shape)
    noisy[2] = np.clip(noisy[2] + rng.uniform(0, 0.2, L.shape[1:]), 0, 1)
    return pos[:, 1], grid, L, noisy


def kernel_benchmark(repeats: int = 20, seed: int = 0) -> list[dict]:
    """Mean wall time per call of every kernel under every available backend."""
    pos, grid, L, noisy = _workload(seed)
    params = fields.FieldParams()
    radius = params.truncate * params.sigma
    H = kernels.get_backend("python").accumulate(L, params.sigma, 0.0, radius, 4.0, 256)
    cases = {
        "accumulate": lambda k: k.accumulate(L, params.sigma, params.p_floor, radius, 4.0, 256),
        "accumulate_noisy": lambda k: k.accumulate(noisy, params.sigma, params.p_floor, radius, 4.0, 256),
        "local_maxima": lambda k: k.local_maxima(H, params.threshold, params.nms_window // 2),
        "rasterize": lambda k: k.rasterize(pos, 10.0, 256),
        "assign_vicinity": lambda k: k.assign_vicinity(grid, params.d0, 64),
    }
    rows = []
    for name, fn in cases.items():
        for backend in kernels.available_backends():
            mod = kernels.get_backend(backend)
            fn(mod)
            ts = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(mod)
                ts.append(time.perf_counter() - t0)
            rows.append({"kernel": name, "backend": backend, "mean_s": float(np.mean(ts)),
                         "std_s": float(np.std(ts)), "repeats": repeats})
    return rows
