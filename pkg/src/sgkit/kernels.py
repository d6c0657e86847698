"""Hot loops, served by the compiled extension when it is importable.

Set ``SGKIT_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("SGKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

scatter_add_rows = _impl.scatter_add_rows
segment_mean = _impl.segment_mean
fisher_yates = _impl.fisher_yates

__all__ = ["BACKEND", "scatter_add_rows", "segment_mean", "fisher_yates"]
