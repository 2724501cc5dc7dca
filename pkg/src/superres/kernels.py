"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``SUPERRES_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("SUPERRES_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

ou_recursion = _impl.ou_recursion
su2_survival = _impl.su2_survival

__all__ = ["BACKEND", "ou_recursion", "su2_survival"]
