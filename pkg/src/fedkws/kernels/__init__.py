"""Kernel backend selection.

The hot path (whole-utterance forward and backward) has two interchangeable
implementations: a Cython extension and a vectorized numpy fallback. The
compiled one is preferred when importable; set FEDKWS_KERNEL=numpy or
FEDKWS_KERNEL=cython to force a choice (forcing cython raises if the
extension was not built). Both expose net_forward / net_backward with
identical signatures; see benchmarks/bench_kernels.py for a comparison.
"""

from __future__ import annotations

import os

from . import numpy_backend
from .numpy_backend import LOGIT_CLAMP

_requested = os.environ.get("FEDKWS_KERNEL", "").strip().lower()

if _requested in ("", "cython", "cy"):
    try:
        from . import _svdf_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested:
            raise
        _impl = numpy_backend
        BACKEND = "numpy"
elif _requested in ("numpy", "py", "python"):
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    raise ValueError(f"unknown FEDKWS_KERNEL value: {_requested!r}")

net_forward = _impl.net_forward
net_backward = _impl.net_backward


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import _svdf_cy  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Return the module implementing the named backend."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _svdf_cy
        return _svdf_cy
    raise ValueError(f"unknown backend: {name!r}")
