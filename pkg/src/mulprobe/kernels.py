"""Kernel selection: compiled extension when importable, pure Python otherwise.

Set ``MULPROBE_PURE=1`` to force the fallback (used by the benchmark and by
the parity tests).
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("MULPROBE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

schoolbook = _impl.schoolbook
nonzero_count = _impl.nonzero_count

__all__ = ["BACKEND", "schoolbook", "nonzero_count"]
