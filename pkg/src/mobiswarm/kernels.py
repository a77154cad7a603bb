"""Hot-kernel dispatch: the compiled extension when built, else pure Python.

Set ``MOBISWARM_PURE=1`` to force the pure-Python kernels.
"""

import os

from mobiswarm import _kernels_py

BACKEND = "python"

if os.environ.get("MOBISWARM_PURE", "") not in ("1", "true", "yes"):
    try:
        from mobiswarm import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

water_fill = _impl.water_fill
pick_rarest = _impl.pick_rarest
window_sum = _impl.window_sum
