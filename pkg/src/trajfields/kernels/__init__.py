"""Hot-loop kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it has been built; otherwise, or when
``TRAJFIELDS_PURE_PYTHON=1`` is set, the numpy versions are used.  Both
backends stay importable through :func:`get_backend` so they can be tested
and benchmarked against each other.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"cython"`` or ``"python"``)."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}") from None


if os.environ.get("TRAJFIELDS_PURE_PYTHON") == "1" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"
_active = _BACKENDS[BACKEND]
log.debug("trajfields kernels: %s backend", BACKEND)

accumulate = _active.accumulate
local_maxima = _active.local_maxima
rasterize = _active.rasterize
assign_vicinity = _active.assign_vicinity

__all__ = [
    "BACKEND",
    "accumulate",
    "assign_vicinity",
    "available_backends",
    "get_backend",
    "local_maxima",
    "rasterize",
]
