"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the NumPy
fallback is imported. Set ``NRSFM_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("NRSFM_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import best_swap, isa_sweep
else:
    try:
        from ._kernels import best_swap, isa_sweep

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import best_swap, isa_sweep

__all__ = ["BACKEND", "best_swap", "isa_sweep"]
