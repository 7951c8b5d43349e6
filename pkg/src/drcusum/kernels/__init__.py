"""Numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension is optional; if it failed to build (no compiler, no
cython at install time) the numpy implementation takes over with identical
semantics. `BACKEND` records which one is active.
"""
from . import _ref

try:
    from . import _core as _impl
    BACKEND = "cython"
except ImportError:  # extension not built
    _impl = _ref
    BACKEND = "python"

tilted_stats = _impl.tilted_stats
min_c = _impl.min_c
cusum_path = _impl.cusum_path
cusum_run = _impl.cusum_run
multi_cusum_run = _impl.multi_cusum_run

__all__ = [
    "BACKEND",
    "tilted_stats",
    "min_c",
    "cusum_path",
    "cusum_run",
    "multi_cusum_run",
    "_ref",
    "_impl",
]
