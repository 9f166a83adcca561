"""Kernel backend selection.

The hot inner loops (conv2d forward/backward, raycasting) exist twice:
numba-jitted loops and a vectorized pure-numpy fallback. The environment
variable INTNAV_BACKEND picks one at import time:

    INTNAV_BACKEND=numba   jitted kernels (default when numba imports)
    INTNAV_BACKEND=numpy   pure-numpy kernels

Both paths produce the same values up to floating-point summation order;
benchmarks/bench_backends.py compares their throughput.
"""

from __future__ import annotations

import os

from . import _kernels_np

_VALID = ("numba", "numpy")


def _select() -> tuple[str, object]:
    requested = os.environ.get("INTNAV_BACKEND", "").strip().lower()
    if requested and requested not in _VALID:
        raise ValueError(f"INTNAV_BACKEND must be one of {_VALID}, got {requested!r}")
    if requested == "numpy":
        return "numpy", _kernels_np
    try:
        from . import _kernels_nb
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", _kernels_np
    return "numba", _kernels_nb


_NAME, _MOD = _select()

conv2d_forward = _MOD.conv2d_forward
conv2d_backward = _MOD.conv2d_backward
raycast_depths = _MOD.raycast_depths


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _NAME
