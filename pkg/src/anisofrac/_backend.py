"""Select the compiled grid kernels when available.

Set ``ANISOFRAC_PURE=1`` to force the numpy fallback.
"""

import os

BACKEND = "python"

if os.environ.get("ANISOFRAC_PURE", "") not in ("1", "true", "yes"):
    try:
        from ._accel import interp_multilinear, scatter_multilinear  # noqa: F401

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from ._accel_py import interp_multilinear, scatter_multilinear  # noqa: F401
