"""Pick the compiled RK4 kernel when it is built, else the numpy version.

Set SRTUBE_PURE_PYTHON=1 to force the numpy kernel.
"""

import os

from . import _kernels_py

if os.environ.get("SRTUBE_PURE_PYTHON", "") not in ("", "0"):
    rk4_affine = _kernels_py.rk4_affine
    BACKEND = "python"
else:
    try:
        from ._kernels import rk4_affine
        BACKEND = "cython"
    except ImportError:
        rk4_affine = _kernels_py.rk4_affine
        BACKEND = "python"
