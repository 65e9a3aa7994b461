import numpy as np
import pytest
import torch

from trajfields import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run a test once per kernel backend by swapping the active functions."""
    mod = kernels.get_backend(request.param)
    for name in ("accumulate", "local_maxima", "rasterize", "assign_vicinity"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record_criterion(request):
    """Store a one-line verdict for the acceptance summary."""
    results = request.config.stash[_RESULTS]

    def record(number: int, passed: bool, detail: str):
        results[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
