"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Backend selection, resolved once at import:
  EGOGROUND_BACKEND=numba   force the jitted path (error if numba missing)
  EGOGROUND_BACKEND=numpy   force the fallback
  unset                     numba when importable, else numpy

`benchmarks/bench_kernels.py` compares the two paths.
"""

from __future__ import annotations

import logging
import os

from . import _scan_np

log = logging.getLogger(__name__)

_requested = os.environ.get("EGOGROUND_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"EGOGROUND_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_impl = _scan_np
_backend = "numpy"
if _requested != "numpy":
    try:
        from . import _scan_nb

        _impl = _scan_nb
        _backend = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        log.warning("numba unavailable, falling back to the numpy scan path")


def active_backend() -> str:
    return _backend


def ssm_scan_forward(dA, dBx, C):
    return _impl.scan_forward(dA, dBx, C)


def ssm_scan_backward(dA, h_all, C, dy):
    return _impl.scan_backward(dA, h_all, C, dy)
